//! Analytic operation counters of the simulated dataflow.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCounters {
    pub tiles: u64,
    pub lut_builds: u64,
    pub pe_selects: u64,
    pub macs: u64,
    pub words_streamed: u64,
    pub tokens: u64,
    pub state_updates: u64,
}

impl EngineCounters {
    pub fn add(&mut self, o: &EngineCounters) {
        self.tiles += o.tiles;
        self.lut_builds += o.lut_builds;
        self.pe_selects += o.pe_selects;
        self.macs += o.macs;
        self.words_streamed += o.words_streamed;
        self.tokens += o.tokens;
        self.state_updates += o.state_updates;
    }
}

/// One record per engine invocation, written as a JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub layer: String,
    pub engine: String,
    #[serde(flatten)]
    pub counters: EngineCounters,
}

/// Per-engine totals plus the invocation log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerfCounters {
    pub engines: BTreeMap<String, EngineCounters>,
    #[serde(skip)]
    pub records: Vec<LayerRecord>,
}

impl PerfCounters {
    pub fn record(&mut self, engine: &str, layer: impl Into<String>, c: EngineCounters) {
        self.engines.entry(engine.to_string()).or_default().add(&c);
        self.records.push(LayerRecord { layer: layer.into(), engine: engine.to_string(), counters: c });
    }

    pub fn merge(&mut self, other: PerfCounters) {
        for (k, v) in &other.engines {
            self.engines.entry(k.clone()).or_default().add(v);
        }
        self.records.extend(other.records);
    }

    pub fn engine(&self, name: &str) -> EngineCounters {
        self.engines.get(name).copied().unwrap_or_default()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_lines() {
        let mut p = PerfCounters::default();
        let c = EngineCounters { tiles: 2, lut_builds: 1, ..Default::default() };
        p.record("linear", "a", c);
        p.record("linear", "b", c);
        assert_eq!(p.engine("linear").tiles, 4);
        let mut buf = Vec::new();
        p.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["layer"], "a");
        assert_eq!(v["tiles"], 2);
    }
}
