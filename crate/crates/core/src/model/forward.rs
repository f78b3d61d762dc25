//! Encoder execution in float or quantized mode.

use std::collections::BTreeMap;

use super::weights::{BlockWeights, ConvSite, DirWeights, LinearSite, SiteKind, VimModel};
use crate::aux::{causal_conv, causal_conv_quantized, flip_sequence, im2col, insert_cls, normalize, residual_add, PatchEmbedConfig};
use crate::error::{Error, Result};
use crate::linear::{linear_forward_reference, Activation, LinearEngine};
use crate::mat::Mat;
use crate::perf::PerfCounters;
use crate::quant::ApotCodebook;
use crate::ssm::{ExpMode, SsmEngine, SsmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub exp_mode: ExpMode,
    /// SSM state tile width.
    pub nb: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { exp_mode: ExpMode::Exact, nb: 16 }
    }
}

/// Hook for inspecting site inputs and outputs during a forward pass.
/// Site inputs are reported before any explicit smoothing is applied.
pub trait Observer {
    fn input(&mut self, _site: &str, _x: &Mat) {}
    fn output(&mut self, _site: &str, _y: &Mat) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

/// Keeps a copy of every site input and/or output.
#[derive(Debug, Default)]
pub struct Recorder {
    pub keep_inputs: bool,
    pub keep_outputs: bool,
    pub inputs: BTreeMap<String, Mat>,
    pub outputs: BTreeMap<String, Mat>,
}

impl Recorder {
    pub fn outputs_only() -> Self {
        Self { keep_outputs: true, ..Default::default() }
    }
}

impl Observer for Recorder {
    fn input(&mut self, site: &str, x: &Mat) {
        if self.keep_inputs {
            self.inputs.insert(site.to_string(), x.clone());
        }
    }

    fn output(&mut self, site: &str, y: &Mat) {
        if self.keep_outputs {
            self.outputs.insert(site.to_string(), y.clone());
        }
    }
}

struct Ctx<'a, O: Observer> {
    engine: Option<LinearEngine>,
    codebook: Option<ApotCodebook>,
    f_bits: u32,
    ssm: SsmEngine,
    perf: PerfCounters,
    obs: &'a mut O,
}

fn map(x: &Mat, f: impl Fn(f32) -> f32) -> Mat {
    Mat { rows: x.rows, cols: x.cols, data: x.data.iter().map(|&v| f(v)).collect() }
}

impl<O: Observer> Ctx<'_, O> {
    fn activate(&self, act: Activation, v: f32) -> f32 {
        match &self.engine {
            Some(e) => e.activate(act, v),
            None => act.apply(v),
        }
    }

    fn linear(&mut self, name: &str, site: &LinearSite, x: &Mat) -> Result<Mat> {
        self.obs.input(name, x);
        let scaled;
        let xin = match &site.pre_scale {
            Some(s) => {
                let mut m = x.clone();
                for r in 0..m.rows {
                    for (v, s) in m.row_mut(r).iter_mut().zip(s) {
                        *v /= s;
                    }
                }
                scaled = m;
                &scaled
            }
            None => x,
        };
        let y = match &site.kind {
            SiteKind::Float { w, out_dim, bias, act, .. } => linear_forward_reference(xin, w, *out_dim, bias, *act),
            SiteKind::Quant(layer) => {
                let engine = self.engine.as_ref().ok_or_else(|| Error::Config(format!("{name} is quantized but the model has no quantization config")))?;
                let (y, c) = engine.forward(xin, layer, &site.act_quant)?;
                self.perf.record("linear", name, c);
                Ok(y)
            }
        }
        .map_err(|e| e.context(name))?;
        self.obs.output(name, &y);
        Ok(y)
    }

    /// Conv followed by SiLU.
    fn conv(&mut self, name: &str, site: &ConvSite, x: &Mat) -> Result<Mat> {
        self.obs.input(name, x);
        let y = match site {
            ConvSite::Float { cfg, w, bias } => map(&causal_conv(x, cfg, w, bias)?, |v| Activation::Silu.apply(v)),
            ConvSite::Quant { conv, act_quant } => {
                let cb = self.codebook.as_ref().ok_or_else(|| Error::Config(format!("{name} is quantized but the model has no codebook")))?;
                let (y, c) = causal_conv_quantized(x, conv, cb, self.f_bits, act_quant).map_err(|e| e.context(name))?;
                self.perf.record("conv", name, c);
                map(&y, |v| self.activate(Activation::Silu, v))
            }
        };
        self.obs.output(name, &y);
        Ok(y)
    }

    fn direction(&mut self, name: &str, dw: &DirWeights, x: &Mat, gate: &Mat, state: usize, rank: usize) -> Result<Mat> {
        let u = self.conv(&format!("{name}.conv"), &dw.conv, x)?;
        let dbc = self.linear(&format!("{name}.x_proj"), &dw.x_proj, &u)?;
        let delta = self.linear(&format!("{name}.dt_proj"), &dw.dt_proj, &dbc.columns(0, rank))?;
        let params = SsmParams {
            len: x.rows,
            dim: x.cols,
            state,
            u: u.data,
            delta: delta.data,
            a: dw.a.clone(),
            b: dbc.columns(rank, rank + state).data,
            c: dbc.columns(rank + state, rank + 2 * state).data,
            d_skip: dw.d_skip.clone(),
            z: gate.data.clone(),
        };
        let ssm_name = format!("{name}.ssm");
        let (y, c) = self.ssm.forward(&params).map_err(|e| e.context(&ssm_name))?;
        self.perf.record("ssm", &ssm_name, c);
        let y = Mat::new(x.rows, x.cols, y)?;
        self.obs.output(&ssm_name, &y);
        Ok(y)
    }
}

impl VimModel {
    fn ctx<'a, O: Observer>(&self, opts: &ForwardOptions, obs: &'a mut O) -> Result<Ctx<'a, O>> {
        let (engine, codebook, f_bits) = match &self.quant {
            Some(q) => {
                let cb = q.codebook()?;
                (Some(LinearEngine::new(q.tile_config(), cb.clone())?), Some(cb), q.f_bits)
            }
            None => (None, None, 0),
        };
        Ok(Ctx { engine, codebook, f_bits, ssm: SsmEngine::new(opts.nb, opts.exp_mode)?, perf: PerfCounters::default(), obs })
    }

    fn block_inner<O: Observer>(&self, ctx: &mut Ctx<'_, O>, i: usize, b: &BlockWeights, x: &Mat) -> Result<Mat> {
        let c = &self.cfg;
        let (e, n, r) = (c.inner(), c.state, c.dt_rank());
        let p = format!("blocks.{i}");
        let h = normalize(x, c.norm, &b.norm_gamma, &b.norm_beta, c.norm_eps)?;
        let xz = ctx.linear(&format!("{p}.in_proj"), &b.in_proj, &h)?;
        let xs = xz.columns(0, e);
        let gate = map(&xz.columns(e, 2 * e), |v| ctx.activate(Activation::Silu, v));
        let yf = ctx.direction(&format!("{p}.fwd"), &b.fwd, &xs, &gate, n, r)?;
        let yb = ctx.direction(&format!("{p}.bwd"), &b.bwd, &flip_sequence(&xs), &flip_sequence(&gate), n, r)?;
        let merged = residual_add(&yf, &flip_sequence(&yb))?;
        let out = ctx.linear(&format!("{p}.out_proj"), &b.out_proj, &merged)?;
        let y = residual_add(x, &out)?;
        if let Some((t, ch)) = y.first_non_finite() {
            return Err(Error::NonFinite(format!("output token {t}, channel {ch}")));
        }
        Ok(y)
    }

    /// One encoder block on a `[L, d]` token matrix.
    pub fn block_forward<O: Observer>(&self, i: usize, x: &Mat, opts: &ForwardOptions, obs: &mut O) -> Result<(Mat, PerfCounters)> {
        let b = self.blocks.get(i).ok_or_else(|| Error::Config(format!("no block {i}")))?;
        if x.cols != self.cfg.d_model {
            return Err(Error::Shape(format!("tokens are {} wide, model width is {}", x.cols, self.cfg.d_model)));
        }
        let mut ctx = self.ctx(opts, obs)?;
        let y = self.block_inner(&mut ctx, i, b, x).map_err(|e| e.context(&format!("block {i}")))?;
        Ok((y, ctx.perf))
    }

    /// Logits for one `[C, H, W]` image.
    pub fn forward<O: Observer>(&self, image: &[f32], height: usize, width: usize, opts: &ForwardOptions, obs: &mut O) -> Result<(Vec<f32>, PerfCounters)> {
        let c = &self.cfg;
        let pcfg = PatchEmbedConfig { patch: c.patch, in_channels: c.in_channels, embed_dim: c.d_model };
        let patches = im2col(image, &pcfg, height, width)?;
        let mut ctx = self.ctx(opts, obs)?;
        let tokens = ctx.linear("patch_embed", &self.patch_embed, &patches)?;
        let pos = c.cls.index(tokens.rows);
        let mut x = insert_cls(&tokens, &self.cls, pos)?;
        for (i, b) in self.blocks.iter().enumerate() {
            x = self.block_inner(&mut ctx, i, b, &x).map_err(|e| e.context(&format!("block {i}")))?;
        }
        let cls = Mat::new(1, c.d_model, x.row(pos).to_vec())?;
        let feat = normalize(&cls, c.norm, &self.norm_gamma, &self.norm_beta, c.norm_eps)?;
        let logits = ctx.linear("head", &self.head, &feat)?;
        if let Some((_, k)) = logits.first_non_finite() {
            return Err(Error::NonFinite(format!("logit {k}")));
        }
        Ok((logits.data, ctx.perf))
    }
}
