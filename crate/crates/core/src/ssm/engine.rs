//! Token-major SSM dataflow.

use std::io::Write;

use rayon::prelude::*;

use super::exp::{ExpMode, ExpTable};
use super::stages::{project_row, scratch_len};
use super::SsmFloat;
use crate::error::{Error, Result};
use crate::perf::EngineCounters;

/// Inputs of one selective-SSM invocation, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams<F> {
    pub len: usize,
    pub dim: usize,
    pub state: usize,
    /// `[L, D]`
    pub u: Vec<F>,
    /// `[L, D]`
    pub delta: Vec<F>,
    /// `[D, N]`
    pub a: Vec<F>,
    /// `[L, N]`
    pub b: Vec<F>,
    /// `[L, N]`
    pub c: Vec<F>,
    /// `[D]`
    pub d_skip: Vec<F>,
    /// `[L, D]`
    pub z: Vec<F>,
}

/// Everything the engine reads for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmToken<F> {
    pub u: Vec<F>,
    pub delta: Vec<F>,
    pub b: Vec<F>,
    pub c: Vec<F>,
    pub z: Vec<F>,
}

impl<F: SsmFloat> SsmParams<F> {
    pub fn validate(&self) -> Result<()> {
        let (l, d, n) = (self.len, self.dim, self.state);
        let checks = [
            ("u", self.u.len(), l * d),
            ("delta", self.delta.len(), l * d),
            ("A", self.a.len(), d * n),
            ("B", self.b.len(), l * n),
            ("C", self.c.len(), l * n),
            ("D", self.d_skip.len(), d),
            ("z", self.z.len(), l * d),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::Shape(format!("SSM {name} has {got} values, expected {want} (L={l}, D={d}, N={n})")));
            }
        }
        for (name, v) in [
            ("u", &self.u),
            ("delta", &self.delta),
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d_skip),
            ("z", &self.z),
        ] {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("SSM input {name}[{i}]")));
            }
        }
        Ok(())
    }

    /// Token `t` as a standalone record.
    pub fn token(&self, t: usize) -> SsmToken<F> {
        let (d, n) = (self.dim, self.state);
        SsmToken {
            u: self.u[t * d..(t + 1) * d].to_vec(),
            delta: self.delta[t * d..(t + 1) * d].to_vec(),
            b: self.b[t * n..(t + 1) * n].to_vec(),
            c: self.c[t * n..(t + 1) * n].to_vec(),
            z: self.z[t * d..(t + 1) * d].to_vec(),
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = SsmToken<F>> + '_ {
        (0..self.len).map(|t| self.token(t))
    }

    /// Converts every tensor to another float type.
    pub fn cast<G: SsmFloat>(&self) -> SsmParams<G> {
        let c = |v: &Vec<F>| v.iter().map(|x| G::from(*x).unwrap_or(G::nan())).collect();
        SsmParams {
            len: self.len,
            dim: self.dim,
            state: self.state,
            u: c(&self.u),
            delta: c(&self.delta),
            a: c(&self.a),
            b: c(&self.b),
            c: c(&self.c),
            d_skip: c(&self.d_skip),
            z: c(&self.z),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SsmEngine {
    /// State lanes per tile; a power of two.
    pub nb: usize,
    pub exp_mode: ExpMode,
    table: ExpTable,
}

impl Default for SsmEngine {
    fn default() -> Self {
        Self::new(16, ExpMode::Exact).expect("valid defaults")
    }
}

/// Channels handled per parallel task.
const CHANNEL_CHUNK: usize = 64;

impl SsmEngine {
    pub fn new(nb: usize, exp_mode: ExpMode) -> Result<Self> {
        if !nb.is_power_of_two() {
            return Err(Error::Config(format!("state tile width N_B={nb} must be a power of two")));
        }
        Ok(Self { nb, exp_mode, table: ExpTable::new() })
    }

    pub fn forward<F: SsmFloat>(&self, p: &SsmParams<F>) -> Result<(Vec<F>, EngineCounters)> {
        p.validate()?;
        self.forward_stream(&p.a, &p.d_skip, p.state, p.tokens(), None)
    }

    /// Like [`forward`](Self::forward), writing `{"t", "h"}` JSON lines of the
    /// state after every `every`-th token.
    pub fn forward_traced<F: SsmFloat>(
        &self,
        p: &SsmParams<F>,
        every: usize,
        trace: &mut dyn Write,
    ) -> Result<(Vec<F>, EngineCounters)> {
        p.validate()?;
        self.forward_stream(&p.a, &p.d_skip, p.state, p.tokens(), Some((every.max(1), trace)))
    }

    /// Consumes tokens strictly in order; each is read once and dropped.
    /// `a` is `[D, N]` and stays resident, like the on-chip parameters.
    pub fn forward_stream<F: SsmFloat, I: IntoIterator<Item = SsmToken<F>>>(
        &self,
        a: &[F],
        d_skip: &[F],
        state: usize,
        tokens: I,
        mut trace: Option<(usize, &mut dyn Write)>,
    ) -> Result<(Vec<F>, EngineCounters)> {
        let dim = d_skip.len();
        if a.len() != dim * state {
            return Err(Error::Shape(format!("A has {} values for D={dim}, N={state}", a.len())));
        }
        let mut h = vec![F::zero(); dim * state];
        let mut out = Vec::new();
        let mut len = 0usize;
        let mode = self.exp_mode;
        let nb = self.nb;
        for (t, tok) in tokens.into_iter().enumerate() {
            if tok.u.len() != dim || tok.delta.len() != dim || tok.z.len() != dim || tok.b.len() != state || tok.c.len() != state {
                return Err(Error::Shape(format!("token {t} does not match D={dim}, N={state}")));
            }
            let mut o = vec![F::zero(); dim];
            h.par_chunks_mut(CHANNEL_CHUNK * state.max(1))
                .zip(o.par_chunks_mut(CHANNEL_CHUNK))
                .enumerate()
                .for_each_init(
                    || vec![None; scratch_len(state, nb)],
                    |scratch, (k, (hc, oc))| {
                        let d0 = k * CHANNEL_CHUNK;
                        for (j, out) in oc.iter_mut().enumerate() {
                            let d = d0 + j;
                            let hr = &mut hc[j * state..(j + 1) * state];
                            let ar = &a[d * state..(d + 1) * state];
                            let delta = tok.delta[d];
                            let du = delta * tok.u[d];
                            // stage 1: discretize and update
                            for ((hn, &an), &bn) in hr.iter_mut().zip(ar).zip(&tok.b) {
                                *hn = *hn * self.table.apply(mode, delta * an) + du * bn;
                            }
                            // stage 2: projection
                            let y = project_row(hr, &tok.c, nb, scratch);
                            // stage 3: skip and gate
                            *out = (y + tok.u[d] * d_skip[d]) * tok.z[d];
                        }
                    },
                );
            if let Some(i) = h.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("SSM state at t={t}, d={}, n={}", i / state, i % state)));
            }
            if let Some(d) = o.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("SSM output at t={t}, d={d}")));
            }
            if let Some((every, w)) = trace.as_mut() {
                if (t + 1) % *every == 0 {
                    let line = serde_json::json!({ "t": t, "h": &h });
                    serde_json::to_writer(&mut **w, &line).map_err(std::io::Error::from)?;
                    w.write_all(b"\n")?;
                }
            }
            out.extend(o);
            len += 1;
        }
        let updates = (len * dim * state) as u64;
        let counters = EngineCounters {
            tokens: len as u64,
            state_updates: updates,
            macs: updates,
            tiles: (len * dim * state.div_ceil(nb)) as u64,
            ..Default::default()
        };
        Ok((out, counters))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(len: usize, dim: usize, n: usize, delta: f32) -> SsmParams<f32> {
        let f = |k: usize, s: f32| ((k as f32 * s).sin() * 0.9) as f32;
        SsmParams {
            len,
            dim,
            state: n,
            u: (0..len * dim).map(|k| f(k, 0.31)).collect(),
            delta: vec![delta; len * dim],
            a: (0..dim * n).map(|k| -((k % n) as f32 + 1.0)).collect(),
            b: (0..len * n).map(|k| f(k, 0.7)).collect(),
            c: (0..len * n).map(|k| f(k, 1.1)).collect(),
            d_skip: (0..dim).map(|k| f(k, 0.5)).collect(),
            z: (0..len * dim).map(|k| f(k, 0.13)).collect(),
        }
    }

    #[test]
    fn single_step() {
        let p = params(1, 3, 4, 0.2);
        let (y, c) = SsmEngine::default().forward(&p).unwrap();
        for d in 0..3 {
            let mut acc = 0.0f32;
            let du = p.delta[d] * p.u[d];
            let prods: Vec<f32> = (0..4).map(|n| (du * p.b[n]) * p.c[n]).collect();
            acc += (prods[0] + prods[1]) + (prods[2] + prods[3]);
            let expect = (acc + p.u[d] * p.d_skip[d]) * p.z[d];
            assert_eq!(y[d], expect);
        }
        assert_eq!(c.state_updates, 12);
    }

    #[test]
    fn zero_delta_is_skip_only() {
        let p = params(5, 4, 16, 0.0);
        let (y, _) = SsmEngine::default().forward(&p).unwrap();
        for t in 0..5 {
            for d in 0..4 {
                assert_eq!(y[t * 4 + d], (p.u[t * 4 + d] * p.d_skip[d]) * p.z[t * 4 + d]);
            }
        }
    }

    #[test]
    fn trace_lines() {
        let p = params(6, 2, 4, 0.1);
        let mut buf = Vec::new();
        SsmEngine::default().forward_traced(&p, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(v["t"], 1);
        assert_eq!(v["h"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn blowup_reports_coordinates() {
        let mut p = params(4, 2, 2, 1.0);
        p.a = vec![80.0; 4];
        let err = SsmEngine::default().forward(&p).unwrap_err();
        assert!(err.is_numerical());
        assert!(err.to_string().contains("t="), "{err}");
    }

    #[test]
    fn bad_tile_width() {
        assert!(SsmEngine::new(3, ExpMode::Exact).is_err());
    }
}
