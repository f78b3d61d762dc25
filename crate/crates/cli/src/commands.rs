use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use vimq_core::model::{
    calibrate as run_calibration, init_model, load_blobs, load_model, quantize_model, save_blobs, save_model, CalibStats, ForwardOptions,
    NoObserver, QuantConfig, Recorder, Variant, VimConfig, VimModel,
};
use vimq_core::perf::{LayerRecord, PerfCounters};
use vimq_core::quant::ActQuantKind;
use vimq_core::report::{argmax, cosine, DseRecord, EvalReport, Metrics};
use vimq_core::ssm::ExpMode;
use vimq_core::tensor::{Container, Tensor};

use crate::config::FileConfig;
use crate::{CalibrateArgs, DseArgs, EngineArgs, GenInputArgs, InferArgs, InitArgs, Metric, Mode, PackArgs, QuantArgs, QuantizeArgs};

/// Images `[N, C, H, W]` plus optional labels.
struct Inputs {
    images: Vec<Vec<f32>>,
    channels: usize,
    height: usize,
    width: usize,
    labels: Option<Vec<i32>>,
}

fn load_inputs(path: &Path) -> Result<Inputs> {
    let c = Container::load(path).with_context(|| format!("loading {}", path.display()))?;
    let t = c.require("images")?;
    let (n, ch, h, w) = match t.shape() {
        &[n, ch, h, w] => (n, ch, h, w),
        &[ch, h, w] => (1, ch, h, w),
        s => bail!(vimq_core::Error::Shape(format!("images must be [N, C, H, W], got {s:?}"))),
    };
    let data = t.as_f32()?;
    let per = ch * h * w;
    let images = (0..n).map(|k| data[k * per..(k + 1) * per].to_vec()).collect();
    let labels = match c.get("labels") {
        Some(l) => {
            let l = l.as_i32()?.to_vec();
            if l.len() != n {
                bail!(vimq_core::Error::Shape(format!("{} labels for {n} images", l.len())));
            }
            Some(l)
        }
        None => None,
    };
    Ok(Inputs { images, channels: ch, height: h, width: w, labels })
}

fn check_channels(m: &VimModel, inputs: &Inputs) -> Result<()> {
    if inputs.channels != m.cfg.in_channels {
        bail!(vimq_core::Error::Shape(format!("images have {} channels, model takes {}", inputs.channels, m.cfg.in_channels)));
    }
    Ok(())
}

fn forward_options(e: &EngineArgs, file: &FileConfig) -> ForwardOptions {
    let d = ForwardOptions::default();
    ForwardOptions { exp_mode: e.exp_mode.or(file.exp_mode).unwrap_or(d.exp_mode), nb: e.nb.or(file.nb).unwrap_or(d.nb) }
}

fn quant_config(a: &QuantArgs, file: &FileConfig, alpha: Option<f32>) -> Result<QuantConfig> {
    let mut q = QuantConfig::for_bits(a.bits.or(file.bits).unwrap_or(4))?;
    q.block = a.block.or(file.block).unwrap_or(q.block);
    q.alpha = alpha.or(a.alpha).or(file.alpha).unwrap_or(q.alpha);
    q.smooth = !a.no_smooth && file.smooth.unwrap_or(true);
    let stat = a.static_act || file.static_act.unwrap_or(false);
    let tensor = a.per_tensor_act || file.per_tensor_act.unwrap_or(false);
    q.act = match (stat, tensor) {
        (false, false) => ActQuantKind::DynamicPerToken,
        (false, true) => ActQuantKind::DynamicPerTensor,
        (true, false) => ActQuantKind::StaticPerPosition,
        (true, true) => ActQuantKind::StaticPerTensor,
    };
    q.validate()?;
    Ok(q)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    Ok(w.flush()?)
}

pub fn init(a: &InitArgs, file: &FileConfig) -> Result<()> {
    let mut cfg = VimConfig::new(a.variant.or(file.variant).unwrap_or(Variant::Tiny));
    cfg.n_blocks = a.blocks.or(file.blocks).unwrap_or(cfg.n_blocks);
    cfg.classes = a.classes.or(file.classes).unwrap_or(cfg.classes);
    cfg.cls = a.cls.or(file.cls).unwrap_or(cfg.cls);
    cfg.norm = a.norm.or(file.norm).unwrap_or(cfg.norm);
    let m = init_model(&cfg, a.seed)?;
    save_model(&m, &a.out)?;
    println!("wrote {:?} model (d={}, {} blocks, {} classes) to {}", cfg.variant, cfg.d_model, cfg.n_blocks, cfg.classes, a.out.display());
    Ok(())
}

pub fn gen_input(a: &GenInputArgs, file: &FileConfig) -> Result<()> {
    let h = a.height.or(file.height).unwrap_or(224);
    let w = a.width.or(file.width).unwrap_or(224);
    if a.count == 0 || a.channels == 0 {
        bail!(vimq_core::Error::Config("count and channels must be ≥ 1".into()));
    }
    let mut cfg = VimConfig::new(file.variant.unwrap_or(Variant::Tiny));
    cfg.in_channels = a.channels;
    let mut data = Vec::with_capacity(a.count * a.channels * h * w);
    for k in 0..a.count {
        data.extend(vimq_core::model::random_image(&cfg, h, w, a.seed.wrapping_add(k as u64)));
    }
    let mut c = Container::new();
    c.insert("images", Tensor::f32(&[a.count, a.channels, h, w], data)?)?;
    if let Some(classes) = a.labels {
        if classes == 0 {
            bail!(vimq_core::Error::Config("label count must be ≥ 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x1abe1);
        c.insert("labels", Tensor::i32(&[a.count], (0..a.count).map(|_| rng.random_range(0..classes) as i32).collect())?)?;
    }
    c.save(&a.out)?;
    println!("wrote {} image(s) of {}x{}x{} to {}", a.count, a.channels, h, w, a.out.display());
    Ok(())
}

pub fn calibrate(a: &CalibrateArgs, file: &FileConfig) -> Result<()> {
    let m = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if m.is_quantized() {
        bail!(vimq_core::Error::Config("calibration needs a float model".into()));
    }
    let inputs = load_inputs(&a.input)?;
    check_channels(&m, &inputs)?;
    let stats = run_calibration(&m, &inputs.images, inputs.height, inputs.width, &forward_options(&a.engine, file))?;
    stats.to_container()?.save(&a.out)?;
    println!("calibrated {} sites over {} image(s)", stats.absmax.len(), stats.samples);
    Ok(())
}

#[derive(Serialize)]
struct QuantizeSummary<'a> {
    config: &'a QuantConfig,
    mean_weight_mse: f64,
    weight_mse: &'a std::collections::BTreeMap<String, f64>,
}

pub fn quantize(a: &QuantizeArgs, file: &FileConfig) -> Result<()> {
    let q = quant_config(&a.quant, file, None)?;
    let m = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let calib = CalibStats::from_container(&Container::load(&a.calib).with_context(|| format!("loading {}", a.calib.display()))?)?;
    let (qm, summary) = quantize_model(&m, &calib, &q)?;
    save_model(&qm, &a.out)?;
    let weights = a.weights.clone().unwrap_or_else(|| a.out.with_extension("vimqw"));
    save_blobs(&qm, &weights)?;

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<28} {:>12}", "layer", "weight mse")?;
    for (name, v) in &summary.weight_mse {
        writeln!(out, "{name:<28} {v:>12.4e}")?;
    }
    writeln!(out, "{} layers quantized to W{}A8, B={}, mean mse {:.4e}", summary.weight_mse.len(), q.bits, q.block, summary.mean_mse())?;
    writeln!(out, "wrote {} and {}", a.out.display(), weights.display())?;
    if let Some(p) = &a.summary {
        write_json(p, &QuantizeSummary { config: &q, mean_weight_mse: summary.mean_mse(), weight_mse: &summary.weight_mse })?;
    }
    Ok(())
}

pub fn pack(a: &PackArgs) -> Result<()> {
    let m = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if !m.is_quantized() {
        bail!(vimq_core::Error::Config("only quantized models have packed weights".into()));
    }
    save_blobs(&m, &a.out)?;
    let words: usize = m
        .linear_sites()
        .iter()
        .filter_map(|(_, s)| match &s.kind {
            vimq_core::model::SiteKind::Quant(q) => Some(q.blob.words.len()),
            _ => None,
        })
        .sum();
    println!("wrote {words} 256-bit words to {}", a.out.display());
    Ok(())
}

fn sha256_hex(v: &[f32]) -> String {
    let mut h = Sha256::new();
    for x in v {
        h.update(x.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct PathRun {
    logits: Vec<Vec<f32>>,
    perf: Vec<PerfCounters>,
    layers: std::collections::BTreeMap<String, vimq_core::Mat>,
}

fn run_path(m: &VimModel, inputs: &Inputs, opts: &ForwardOptions, keep_layers: bool) -> Result<PathRun> {
    let mut run = PathRun { logits: Vec::new(), perf: Vec::new(), layers: Default::default() };
    for (k, img) in inputs.images.iter().enumerate() {
        let (logits, perf) = if keep_layers && k == 0 {
            let mut rec = Recorder::outputs_only();
            let r = m.forward(img, inputs.height, inputs.width, opts, &mut rec);
            run.layers = rec.outputs;
            r
        } else {
            m.forward(img, inputs.height, inputs.width, opts, &mut NoObserver)
        }
        .with_context(|| format!("image {k}"))?;
        run.logits.push(logits);
        run.perf.push(perf);
    }
    Ok(run)
}

fn top_k(logits: &[Vec<f32>], labels: &[i32], k: usize) -> f64 {
    let hits = logits
        .iter()
        .zip(labels)
        .filter(|(l, &y)| {
            let mut idx: Vec<usize> = (0..l.len()).collect();
            idx.sort_by(|&a, &b| l[b].total_cmp(&l[a]).then(a.cmp(&b)));
            idx.iter().take(k).any(|&i| i as i32 == y)
        })
        .count();
    hits as f64 / logits.len().max(1) as f64
}

#[derive(Serialize)]
struct PathSummary {
    logits_sha256: String,
    predictions: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top5: Option<f64>,
}

impl PathSummary {
    fn new(run: &PathRun, labels: Option<&[i32]>) -> Self {
        let flat: Vec<f32> = run.logits.concat();
        Self {
            logits_sha256: sha256_hex(&flat),
            predictions: run.logits.iter().map(|l| argmax(l)).collect(),
            top1: labels.map(|y| top_k(&run.logits, y, 1)),
            top5: labels.map(|y| top_k(&run.logits, y, 5)),
        }
    }
}

#[derive(Serialize)]
struct InferReport {
    mode: Mode,
    images: usize,
    height: usize,
    width: usize,
    exp_mode: ExpMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    quantized: Option<PathSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    float: Option<PathSummary>,
    /// Quantized path against the float path; layer metrics use the first image.
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<EvalReport>,
}

#[derive(Serialize)]
struct CounterLine<'a> {
    path: &'a str,
    image: usize,
    #[serde(flatten)]
    record: &'a LayerRecord,
}

pub fn infer(a: &InferArgs, file: &FileConfig) -> Result<()> {
    let mode = a.mode.or(file.mode).unwrap_or(Mode::Quantized);
    let opts = forward_options(&a.engine, file);
    let mut m = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if let Some(w) = &a.weights {
        load_blobs(&mut m, &Container::load(w).with_context(|| format!("loading {}", w.display()))?)?;
    }
    let inputs = load_inputs(&a.input)?;
    check_channels(&m, &inputs)?;
    if inputs.images.is_empty() {
        bail!(vimq_core::Error::Shape("input holds no images".into()));
    }

    let want_q = matches!(mode, Mode::Quantized | Mode::Both);
    let want_f = matches!(mode, Mode::Float | Mode::Both);
    if want_q && !m.is_quantized() {
        bail!(vimq_core::Error::Config("the quantized path needs a quantized model".into()));
    }
    let float_model = if want_f {
        Some(match (&a.reference, m.is_quantized()) {
            (Some(p), _) => load_model(p).with_context(|| format!("loading {}", p.display()))?,
            (None, true) => m.dequantized()?,
            (None, false) => m.clone(),
        })
    } else {
        None
    };
    if let Some(f) = &float_model {
        if f.is_quantized() {
            bail!(vimq_core::Error::Config("the reference model must be a float model".into()));
        }
    }

    let both = mode == Mode::Both;
    let qrun = if want_q { Some(run_path(&m, &inputs, &opts, both)?) } else { None };
    let frun = match &float_model {
        Some(f) => Some(run_path(f, &inputs, &opts, both)?),
        None => None,
    };
    let labels = inputs.labels.as_deref();

    let comparison = match (&qrun, &frun) {
        (Some(q), Some(f)) => {
            let mut r = EvalReport { end_to_end: Some(Metrics::compare(&q.logits.concat(), &f.logits.concat())), ..Default::default() };
            for (name, qm) in &q.layers {
                if let Some(fm) = f.layers.get(name) {
                    r.layers.insert(name.clone(), Metrics::compare(&qm.data, &fm.data));
                }
            }
            r.top1 = labels.map(|y| top_k(&q.logits, y, 1));
            r.top5 = labels.map(|y| top_k(&q.logits, y, 5));
            Some(r)
        }
        _ => None,
    };

    let report = InferReport {
        mode,
        images: inputs.images.len(),
        height: inputs.height,
        width: inputs.width,
        exp_mode: opts.exp_mode,
        quantized: qrun.as_ref().map(|r| PathSummary::new(r, labels)),
        float: frun.as_ref().map(|r| PathSummary::new(r, labels)),
        comparison,
    };

    for (name, run, s) in [("quantized", &qrun, &report.quantized), ("float", &frun, &report.float)] {
        if let (Some(run), Some(s)) = (run, s) {
            println!("{name:>9}: sha256 {} predictions {:?}", s.logits_sha256, s.predictions);
            let total = run.perf.iter().fold(PerfCounters::default(), |mut acc, p| {
                acc.merge(p.clone());
                acc
            });
            for (engine, c) in &total.engines {
                println!("{:>9}  {engine:<6} tiles {} lut_builds {} macs {} words {} state_updates {}", "", c.tiles, c.lut_builds, c.macs, c.words_streamed, c.state_updates);
            }
        }
    }
    if let Some(c) = &report.comparison {
        if let Some(e) = &c.end_to_end {
            println!("quantized vs float: cosine {:.6} rel {:.4e} max abs {:.4e}", e.cosine, e.relative_error, e.max_abs_error);
        }
    }

    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    if let Some(p) = &a.counters {
        let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
        for (name, run) in [("quantized", &qrun), ("float", &frun)] {
            if let Some(run) = run {
                for (image, perf) in run.perf.iter().enumerate() {
                    for record in &perf.records {
                        serde_json::to_writer(&mut w, &CounterLine { path: name, image, record })?;
                        w.write_all(b"\n")?;
                    }
                }
            }
        }
        w.flush()?;
    }
    if let Some(p) = &a.logits {
        let run = qrun.as_ref().or(frun.as_ref()).expect("at least one path ran");
        let classes = run.logits[0].len();
        let mut c = Container::new();
        c.insert("logits", Tensor::f32(&[run.logits.len(), classes], run.logits.concat())?)?;
        c.save(p)?;
    }
    Ok(())
}

pub fn dse(a: &DseArgs, file: &FileConfig) -> Result<()> {
    if a.bits.is_empty() || a.blocks.is_empty() {
        bail!(vimq_core::Error::Config("empty DSE grid".into()));
    }
    let opts = forward_options(&a.engine, file);
    let m = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if m.is_quantized() {
        bail!(vimq_core::Error::Config("the sweep needs a float model".into()));
    }
    let calib = CalibStats::from_container(&Container::load(&a.calib).with_context(|| format!("loading {}", a.calib.display()))?)?;
    let inputs = match &a.input {
        Some(p) => load_inputs(p)?,
        None => {
            let (h, w) = (calib.height, calib.width);
            Inputs {
                images: (0..4).map(|k| vimq_core::model::random_image(&m.cfg, h, w, 1000 + k)).collect(),
                channels: m.cfg.in_channels,
                height: h,
                width: w,
                labels: None,
            }
        }
    };
    check_channels(&m, &inputs)?;
    let labels = match a.metric {
        Metric::Top1 => Some(inputs.labels.as_deref().ok_or_else(|| vimq_core::Error::Config("top1 needs labelled input".into()))?),
        Metric::Cosine => None,
    };
    let float = run_path(&m, &inputs, &opts, false)?;
    let float_flat = float.logits.concat();

    let mut records = Vec::new();
    for &bits in &a.bits {
        for &block in &a.blocks {
            let qa = QuantArgs { bits: Some(bits), block: Some(block), alpha: a.alpha, no_smooth: false, static_act: false, per_tensor_act: false };
            let q = quant_config(&qa, file, a.alpha).with_context(|| format!("W={bits} B={block}"))?;
            let (qm, summary) = quantize_model(&m, &calib, &q).with_context(|| format!("W={bits} B={block}"))?;
            let run = run_path(&qm, &inputs, &opts, false).with_context(|| format!("W={bits} B={block}"))?;
            let (metric, value) = match labels {
                Some(y) => ("top1", top_k(&run.logits, y, 1)),
                None => ("cosine", cosine(&run.logits.concat(), &float_flat)),
            };
            println!("W={bits} B={block:<3} {metric} {value:.6} weight mse {:.4e}", summary.mean_mse());
            records.push(DseRecord { bits, block, metric: metric.to_string(), value, weight_mse: summary.mean_mse() });
        }
    }
    write_json(&a.out, &records)?;
    Ok(())
}
