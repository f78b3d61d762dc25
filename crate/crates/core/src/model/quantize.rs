//! Offline quantization: smoothing, then APoT weight quantization.
//!
//! Smoothing sites and how the activation division is realized:
//!
//! | site         | producer                  | realization                      |
//! |--------------|---------------------------|----------------------------------|
//! | `in_proj`    | block norm                | folded into norm `gamma`/`beta`  |
//! | `dt_proj`    | `x_proj` rows `0..rank`   | folded into `x_proj` rows         |
//! | `head`       | final norm                | folded into norm `gamma`/`beta`  |
//! | `x_proj`     | conv + SiLU               | explicit per-channel divide      |
//! | `out_proj`   | SSM sum                   | explicit per-channel divide      |
//!
//! The patch embedding and the depthwise conv are quantized unsmoothed. SSM
//! parameters stay in float.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::calibrate::CalibStats;
use super::config::QuantConfig;
use super::weights::{ConvSite, LinearSite, SiteKind, VimModel};
use crate::aux::QuantizedConv;
use crate::error::{Error, Result};
use crate::linear::QuantizedLinear;
use crate::mat::Mat;
use crate::quant::activation::scale_for_absmax;
use crate::quant::smoothing::{input_channel_absmax, scale_down_rows, scale_up_columns};
use crate::quant::{compute_smoothing, dequantize_weights, fuse_into_affine, ActQuant, ActQuantKind, ApotCodebook, SmoothingScales};
use crate::report::mse;

/// Per-layer weight quantization error and the smoothing factors applied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuantSummary {
    pub weight_mse: BTreeMap<String, f64>,
    #[serde(skip)]
    pub smoothing: BTreeMap<String, Vec<f32>>,
}

impl QuantSummary {
    pub fn mean_mse(&self) -> f64 {
        if self.weight_mse.is_empty() {
            return 0.0;
        }
        self.weight_mse.values().sum::<f64>() / self.weight_mse.len() as f64
    }
}

fn float_parts(site: &mut LinearSite) -> Result<(&mut Vec<f32>, usize, usize, &mut Vec<f32>)> {
    match &mut site.kind {
        SiteKind::Float { w, out_dim, in_dim, bias, .. } => Ok((w, *out_dim, *in_dim, bias)),
        SiteKind::Quant(_) => Err(Error::Config("model is already quantized".into())),
    }
}

fn scales_for(calib: &CalibStats, name: &str, site: &mut LinearSite, alpha: f32) -> Result<SmoothingScales> {
    let act = calib.channel_absmax(name)?;
    let (w, out_dim, in_dim, _) = float_parts(site)?;
    if act.len() != in_dim {
        return Err(Error::Shape(format!("{name}: calibration has {} channels, layer takes {in_dim}", act.len())));
    }
    compute_smoothing(&act, &input_channel_absmax(w, out_dim, in_dim), alpha)
}

/// Applies smoothing to a float model; its float output is unchanged up to
/// rounding. Returns the factors per site name.
pub fn smooth_model(model: &VimModel, calib: &CalibStats, alpha: f32) -> Result<(VimModel, BTreeMap<String, Vec<f32>>)> {
    if model.is_quantized() {
        return Err(Error::Config("smoothing needs a float model".into()));
    }
    let mut m = model.clone();
    let mut applied = BTreeMap::new();
    let rank = m.cfg.dt_rank();
    for (i, b) in m.blocks.iter_mut().enumerate() {
        let p = format!("blocks.{i}");

        let name = format!("{p}.in_proj");
        let s = scales_for(calib, &name, &mut b.in_proj, alpha)?;
        fuse_into_affine(&mut b.norm_gamma, &mut b.norm_beta, &s)?;
        let (w, out_dim, _, _) = float_parts(&mut b.in_proj)?;
        scale_up_columns(w, out_dim, &s.s);
        applied.insert(name, s.s);

        for (dn, d) in [("fwd", &mut b.fwd), ("bwd", &mut b.bwd)] {
            let name = format!("{p}.{dn}.dt_proj");
            let s = scales_for(calib, &name, &mut d.dt_proj, alpha)?;
            let (w, out_dim, _, _) = float_parts(&mut d.dt_proj)?;
            scale_up_columns(w, out_dim, &s.s);
            let (xw, _, x_in, xb) = float_parts(&mut d.x_proj)?;
            scale_down_rows(xw, Some(xb), x_in, 0, &s.s[..rank]);
            applied.insert(name, s.s);

            let name = format!("{p}.{dn}.x_proj");
            let s = scales_for(calib, &name, &mut d.x_proj, alpha)?;
            let (w, out_dim, _, _) = float_parts(&mut d.x_proj)?;
            scale_up_columns(w, out_dim, &s.s);
            d.x_proj.pre_scale = Some(s.s.clone());
            applied.insert(name, s.s);
        }

        let name = format!("{p}.out_proj");
        let s = scales_for(calib, &name, &mut b.out_proj, alpha)?;
        let (w, out_dim, _, _) = float_parts(&mut b.out_proj)?;
        scale_up_columns(w, out_dim, &s.s);
        b.out_proj.pre_scale = Some(s.s.clone());
        applied.insert(name, s.s);
    }
    let s = scales_for(calib, "head", &mut m.head, alpha)?;
    fuse_into_affine(&mut m.norm_gamma, &mut m.norm_beta, &s)?;
    let (w, out_dim, _, _) = float_parts(&mut m.head)?;
    scale_up_columns(w, out_dim, &s.s);
    applied.insert("head".to_string(), s.s);
    Ok((m, applied))
}

/// Activation quantizer of a site whose input is divided by `s`.
fn act_quant(kind: ActQuantKind, calib: &CalibStats, name: &str, s: Option<&[f32]>) -> Result<ActQuant> {
    let smoothed = |m: &Mat, r: usize| -> f32 {
        m.row(r).iter().enumerate().fold(0.0f32, |acc, (j, &v)| acc.max(s.map_or(v, |s| v / s[j])))
    };
    Ok(match kind {
        ActQuantKind::DynamicPerToken => ActQuant::DynamicPerToken,
        ActQuantKind::DynamicPerTensor => ActQuant::DynamicPerTensor,
        ActQuantKind::StaticPerTensor => {
            let m = calib.site(name)?;
            ActQuant::StaticPerTensor(scale_for_absmax((0..m.rows).map(|r| smoothed(m, r)).fold(0.0, f32::max)))
        }
        ActQuantKind::StaticPerPosition => {
            let m = calib.site(name)?;
            ActQuant::StaticPerPosition((0..m.rows).map(|r| scale_for_absmax(smoothed(m, r))).collect())
        }
    })
}

fn quantize_site(site: &LinearSite, q: &QuantConfig, cb: &ApotCodebook, aq: ActQuant, summary: &mut QuantSummary, name: &str) -> Result<LinearSite> {
    let SiteKind::Float { w, out_dim, in_dim, bias, act } = &site.kind else {
        return Err(Error::Config(format!("{name} is already quantized")));
    };
    let layer = QuantizedLinear::from_float(w, *out_dim, *in_dim, bias.clone(), *act, q.block, cb, q.tile).map_err(|e| e.context(name))?;
    summary.weight_mse.insert(name.to_string(), mse(&dequantize_weights(&layer.weights, cb)?, w));
    Ok(LinearSite { kind: SiteKind::Quant(layer), pre_scale: site.pre_scale.clone(), act_quant: aq })
}

fn quantize_conv(site: &ConvSite, cb: &ApotCodebook, aq: ActQuant, summary: &mut QuantSummary, name: &str) -> Result<ConvSite> {
    let ConvSite::Float { cfg, w, bias } = site else {
        return Err(Error::Config(format!("{name} is already quantized")));
    };
    let conv = QuantizedConv::from_float(w, bias.clone(), *cfg, cb).map_err(|e| e.context(name))?;
    summary.weight_mse.insert(name.to_string(), mse(&dequantize_weights(&conv.weights, cb)?, w));
    Ok(ConvSite::Quant { conv, act_quant: aq })
}

/// Smooths (unless disabled) and quantizes every linear and conv site.
pub fn quantize_model(model: &VimModel, calib: &CalibStats, q: &QuantConfig) -> Result<(VimModel, QuantSummary)> {
    q.validate()?;
    model.validate()?;
    let cb = q.codebook()?;
    let (mut m, smoothing) = if q.smooth { smooth_model(model, calib, q.alpha)? } else { (model.clone(), BTreeMap::new()) };
    let mut summary = QuantSummary::default();
    let aq = |name: &str| act_quant(q.act, calib, name, smoothing.get(name).map(|s| s.as_slice()));

    m.patch_embed = quantize_site(&m.patch_embed, q, &cb, aq("patch_embed")?, &mut summary, "patch_embed")?;
    for i in 0..m.blocks.len() {
        let p = format!("blocks.{i}");
        let b = &m.blocks[i];
        let in_proj = quantize_site(&b.in_proj, q, &cb, aq(&format!("{p}.in_proj"))?, &mut summary, &format!("{p}.in_proj"))?;
        let out_proj = quantize_site(&b.out_proj, q, &cb, aq(&format!("{p}.out_proj"))?, &mut summary, &format!("{p}.out_proj"))?;
        let mut dirs = Vec::with_capacity(2);
        for (dn, d) in [("fwd", &b.fwd), ("bwd", &b.bwd)] {
            let mut d = d.clone();
            let n = format!("{p}.{dn}.conv");
            d.conv = quantize_conv(&d.conv, &cb, aq(&n)?, &mut summary, &n)?;
            let n = format!("{p}.{dn}.x_proj");
            d.x_proj = quantize_site(&d.x_proj, q, &cb, aq(&n)?, &mut summary, &n)?;
            let n = format!("{p}.{dn}.dt_proj");
            d.dt_proj = quantize_site(&d.dt_proj, q, &cb, aq(&n)?, &mut summary, &n)?;
            dirs.push(d);
        }
        let b = &mut m.blocks[i];
        b.in_proj = in_proj;
        b.out_proj = out_proj;
        b.bwd = dirs.pop().expect("two directions");
        b.fwd = dirs.pop().expect("two directions");
    }
    m.head = quantize_site(&m.head, q, &cb, aq("head")?, &mut summary, "head")?;
    m.quant = Some(q.clone());
    summary.smoothing = smoothing;
    Ok((m, summary))
}
