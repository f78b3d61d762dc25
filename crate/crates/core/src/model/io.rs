//! Model containers.
//!
//! Layout of a `.vimq` model (all names are container entries):
//!
//! - `meta.arch` i32: variant, d_model, n_blocks, state, expand, conv_kernel,
//!   patch, in_channels, classes, cls position, norm kind
//! - `meta.norm_eps` f32 `[1]`
//! - quantized models only: `meta.quant` i32 (bits, block, tile, F,
//!   activation-quantization kind, smoothing flag), `meta.quant.coarse`,
//!   `meta.quant.fine` (basis exponents), `meta.quant.alpha` f32 `[1]`
//! - per linear site `{name}`: float `{name}.weight` `[out, in]`, or
//!   `{name}.codes` (u4/u8) plus `{name}.scales`; always `{name}.bias`;
//!   optional `{name}.pre_scale` (explicit smoothing) and `{name}.act_scale`
//!   (calibrated static activation scales)
//! - per conv `{name}`: same scheme with `[E, K]` weights
//! - `blocks.{i}.{fwd,bwd}.A` `[E, N]`, `.D` `[E]`; `blocks.{i}.norm.gamma`,
//!   `.beta`; `norm_f.gamma`, `norm_f.beta`; `cls`
//!
//! Packed blobs go to a separate `.vimqw` container as `{name}.words` and
//! `{name}.layout`, one pair per quantized linear site.

use std::path::Path;

use super::config::{ClsPosition, QuantConfig, Variant, VimConfig};
use super::weights::{BlockWeights, ConvSite, DirWeights, LinearSite, SiteKind, VimModel};
use crate::aux::{CausalConvConfig, NormKind, QuantizedConv};
use crate::error::{Error, Result};
use crate::linear::{Activation, QuantizedLinear};
use crate::quant::{ActQuant, ActQuantKind, ApotCodebook, QuantizedWeights};
use crate::tensor::{Container, PackedWeightBlob, Tensor};

fn put_act_quant(c: &mut Container, name: &str, aq: &ActQuant) -> Result<()> {
    match aq {
        ActQuant::StaticPerTensor(s) => c.insert(format!("{name}.act_scale"), Tensor::f32(&[1], vec![*s])?),
        ActQuant::StaticPerPosition(v) => c.insert(format!("{name}.act_scale"), Tensor::f32(&[v.len()], v.clone())?),
        _ => Ok(()),
    }
}

fn put_weights(c: &mut Container, name: &str, qw: &QuantizedWeights) -> Result<()> {
    c.insert(format!("{name}.codes"), qw.codes_tensor()?)?;
    c.insert(format!("{name}.scales"), Tensor::f32(&[qw.scales.len()], qw.scales.clone())?)
}

fn put_linear(c: &mut Container, name: &str, s: &LinearSite) -> Result<()> {
    match &s.kind {
        SiteKind::Float { w, out_dim, in_dim, .. } => c.insert(format!("{name}.weight"), Tensor::f32(&[*out_dim, *in_dim], w.clone())?)?,
        SiteKind::Quant(q) => put_weights(c, name, &q.weights)?,
    }
    c.insert(format!("{name}.bias"), Tensor::f32(&[s.out_dim()], s.bias().to_vec())?)?;
    if let Some(p) = &s.pre_scale {
        c.insert(format!("{name}.pre_scale"), Tensor::f32(&[p.len()], p.clone())?)?;
    }
    put_act_quant(c, name, &s.act_quant)
}

fn put_conv(c: &mut Container, name: &str, s: &ConvSite) -> Result<()> {
    let cfg = s.cfg();
    match s {
        ConvSite::Float { w, .. } => c.insert(format!("{name}.weight"), Tensor::f32(&[cfg.channels, cfg.kernel], w.clone())?)?,
        ConvSite::Quant { conv, act_quant } => {
            put_weights(c, name, &conv.weights)?;
            put_act_quant(c, name, act_quant)?;
        }
    }
    c.insert(format!("{name}.bias"), Tensor::f32(&[cfg.channels], s.bias().to_vec())?)
}

fn put_vec(c: &mut Container, name: &str, v: &[f32]) -> Result<()> {
    c.insert(name, Tensor::f32(&[v.len()], v.to_vec())?)
}

pub fn model_to_container(m: &VimModel) -> Result<Container> {
    let mut c = Container::new();
    let a = &m.cfg;
    let arch = vec![
        a.variant.tag(),
        a.d_model as i32,
        a.n_blocks as i32,
        a.state as i32,
        a.expand as i32,
        a.conv_kernel as i32,
        a.patch as i32,
        a.in_channels as i32,
        a.classes as i32,
        a.cls.tag(),
        a.norm.tag(),
    ];
    c.insert("meta.arch", Tensor::i32(&[arch.len()], arch)?)?;
    c.insert("meta.norm_eps", Tensor::f32(&[1], vec![a.norm_eps])?)?;
    if let Some(q) = &m.quant {
        let meta = vec![q.bits as i32, q.block as i32, q.tile as i32, q.f_bits as i32, q.act.tag(), q.smooth as i32];
        c.insert("meta.quant", Tensor::i32(&[meta.len()], meta)?)?;
        c.insert("meta.quant.coarse", Tensor::i32(&[q.coarse.len()], q.coarse.iter().map(|&k| k as i32).collect())?)?;
        c.insert("meta.quant.fine", Tensor::i32(&[q.fine.len()], q.fine.iter().map(|&k| k as i32).collect())?)?;
        c.insert("meta.quant.alpha", Tensor::f32(&[1], vec![q.alpha])?)?;
    }
    put_linear(&mut c, "patch_embed", &m.patch_embed)?;
    put_vec(&mut c, "cls", &m.cls)?;
    for (i, b) in m.blocks.iter().enumerate() {
        let p = format!("blocks.{i}");
        put_vec(&mut c, &format!("{p}.norm.gamma"), &b.norm_gamma)?;
        put_vec(&mut c, &format!("{p}.norm.beta"), &b.norm_beta)?;
        put_linear(&mut c, &format!("{p}.in_proj"), &b.in_proj)?;
        for (dn, d) in [("fwd", &b.fwd), ("bwd", &b.bwd)] {
            let q = format!("{p}.{dn}");
            put_conv(&mut c, &format!("{q}.conv"), &d.conv)?;
            put_linear(&mut c, &format!("{q}.x_proj"), &d.x_proj)?;
            put_linear(&mut c, &format!("{q}.dt_proj"), &d.dt_proj)?;
            c.insert(format!("{q}.A"), Tensor::f32(&[a.inner(), a.state], d.a.clone())?)?;
            put_vec(&mut c, &format!("{q}.D"), &d.d_skip)?;
        }
        put_linear(&mut c, &format!("{p}.out_proj"), &b.out_proj)?;
    }
    put_vec(&mut c, "norm_f.gamma", &m.norm_gamma)?;
    put_vec(&mut c, "norm_f.beta", &m.norm_beta)?;
    put_linear(&mut c, "head", &m.head)?;
    Ok(c)
}

struct Reader<'a> {
    c: &'a Container,
    quant: Option<(QuantConfig, ApotCodebook)>,
}

impl Reader<'_> {
    fn f32s(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.c.require(name)?.as_f32()?.to_vec())
    }

    fn vec(&self, name: &str, len: usize) -> Result<Vec<f32>> {
        let v = self.f32s(name)?;
        if v.len() != len {
            return Err(Error::Shape(format!("{name} has {} values, expected {len}", v.len())));
        }
        Ok(v)
    }

    fn act_quant(&self, name: &str) -> Result<ActQuant> {
        let kind = self.quant.as_ref().map(|(q, _)| q.act).unwrap_or_default();
        let key = format!("{name}.act_scale");
        Ok(match kind {
            ActQuantKind::DynamicPerToken => ActQuant::DynamicPerToken,
            ActQuantKind::DynamicPerTensor => ActQuant::DynamicPerTensor,
            ActQuantKind::StaticPerTensor => {
                let v = self.vec(&key, 1)?;
                ActQuant::StaticPerTensor(v[0])
            }
            ActQuantKind::StaticPerPosition => ActQuant::StaticPerPosition(self.f32s(&key)?),
        })
    }

    fn weights(&self, name: &str, shape: [usize; 2], block: usize) -> Result<QuantizedWeights> {
        let (_, cb) = self.quant.as_ref().ok_or_else(|| Error::Format(format!("{name} has codes but the model has no meta.quant")))?;
        let codes = self.c.require(&format!("{name}.codes"))?;
        if codes.shape() != shape {
            return Err(Error::Shape(format!("{name}.codes is {:?}, expected {shape:?}", codes.shape())));
        }
        QuantizedWeights::from_tensors(codes, self.c.require(&format!("{name}.scales"))?, block, cb).map_err(|e| e.context(name))
    }

    fn linear(&self, name: &str, in_dim: usize, out_dim: usize, act: Activation) -> Result<LinearSite> {
        let bias = self.vec(&format!("{name}.bias"), out_dim)?;
        let mut site = if self.c.contains(&format!("{name}.codes")) {
            let q = &self.quant.as_ref().ok_or_else(|| Error::Format(format!("{name} has codes but the model has no meta.quant")))?.0;
            let qw = self.weights(name, [out_dim, in_dim], q.block)?;
            LinearSite {
                kind: SiteKind::Quant(QuantizedLinear::new(qw, bias, act, q.tile)?),
                pre_scale: None,
                act_quant: self.act_quant(name)?,
            }
        } else {
            let w = self.vec(&format!("{name}.weight"), out_dim * in_dim)?;
            LinearSite::float(w, out_dim, in_dim, bias, act)?
        };
        let ps = format!("{name}.pre_scale");
        if self.c.contains(&ps) {
            site.pre_scale = Some(self.vec(&ps, in_dim)?);
        }
        Ok(site)
    }

    fn conv(&self, name: &str, cfg: CausalConvConfig) -> Result<ConvSite> {
        let bias = self.vec(&format!("{name}.bias"), cfg.channels)?;
        if self.c.contains(&format!("{name}.codes")) {
            let qw = self.weights(name, [cfg.channels, cfg.kernel], cfg.kernel)?;
            Ok(ConvSite::Quant { conv: QuantizedConv::new(cfg, qw, bias)?, act_quant: self.act_quant(name)? })
        } else {
            Ok(ConvSite::Float { cfg, w: self.vec(&format!("{name}.weight"), cfg.channels * cfg.kernel)?, bias })
        }
    }
}

fn usize_of(v: i32, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Format(format!("negative {what} {v}")))
}

pub fn model_from_container(c: &Container) -> Result<VimModel> {
    let a = c.require("meta.arch")?.as_i32()?;
    if a.len() != 11 {
        return Err(Error::Format(format!("meta.arch has {} fields, expected 11", a.len())));
    }
    let eps = c.require("meta.norm_eps")?.as_f32()?;
    let cfg = VimConfig {
        variant: Variant::from_tag(a[0])?,
        d_model: usize_of(a[1], "d_model")?,
        n_blocks: usize_of(a[2], "n_blocks")?,
        state: usize_of(a[3], "state")?,
        expand: usize_of(a[4], "expand")?,
        conv_kernel: usize_of(a[5], "conv_kernel")?,
        patch: usize_of(a[6], "patch")?,
        in_channels: usize_of(a[7], "in_channels")?,
        classes: usize_of(a[8], "classes")?,
        cls: ClsPosition::from_tag(a[9])?,
        norm: NormKind::from_tag(a[10])?,
        norm_eps: *eps.first().ok_or_else(|| Error::Format("empty meta.norm_eps".into()))?,
    };
    cfg.validate()?;
    let quant = if c.contains("meta.quant") {
        let q = c.require("meta.quant")?.as_i32()?;
        if q.len() != 6 {
            return Err(Error::Format(format!("meta.quant has {} fields, expected 6", q.len())));
        }
        let exps = |name: &str| -> Result<Vec<u32>> {
            c.require(name)?.as_i32()?.iter().map(|&k| u32::try_from(k).map_err(|_| Error::Format(format!("negative exponent in {name}")))).collect()
        };
        let qc = QuantConfig {
            bits: usize_of(q[0], "bits")? as u32,
            block: usize_of(q[1], "block")?,
            tile: usize_of(q[2], "tile")?,
            f_bits: usize_of(q[3], "F")? as u32,
            act: ActQuantKind::from_tag(q[4])?,
            smooth: q[5] != 0,
            coarse: exps("meta.quant.coarse")?,
            fine: exps("meta.quant.fine")?,
            alpha: *c.require("meta.quant.alpha")?.as_f32()?.first().ok_or_else(|| Error::Format("empty meta.quant.alpha".into()))?,
        };
        qc.validate()?;
        let cb = qc.codebook()?;
        Some((qc, cb))
    } else {
        None
    };
    let r = Reader { c, quant };
    let (d, e, n, rank) = (cfg.d_model, cfg.inner(), cfg.state, cfg.dt_rank());
    let patch_in = cfg.in_channels * cfg.patch * cfg.patch;
    let conv_cfg = CausalConvConfig { kernel: cfg.conv_kernel, channels: e };
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for i in 0..cfg.n_blocks {
        let p = format!("blocks.{i}");
        let dir = |dn: &str| -> Result<DirWeights> {
            let q = format!("{p}.{dn}");
            Ok(DirWeights {
                conv: r.conv(&format!("{q}.conv"), conv_cfg)?,
                x_proj: r.linear(&format!("{q}.x_proj"), e, rank + 2 * n, Activation::None)?,
                dt_proj: r.linear(&format!("{q}.dt_proj"), rank, e, Activation::Softplus)?,
                a: r.vec(&format!("{q}.A"), e * n)?,
                d_skip: r.vec(&format!("{q}.D"), e)?,
            })
        };
        blocks.push(BlockWeights {
            norm_gamma: r.vec(&format!("{p}.norm.gamma"), d)?,
            norm_beta: r.vec(&format!("{p}.norm.beta"), d)?,
            in_proj: r.linear(&format!("{p}.in_proj"), d, 2 * e, Activation::None)?,
            fwd: dir("fwd")?,
            bwd: dir("bwd")?,
            out_proj: r.linear(&format!("{p}.out_proj"), e, d, Activation::None)?,
        });
    }
    let m = VimModel {
        patch_embed: r.linear("patch_embed", patch_in, d, Activation::None)?,
        cls: r.vec("cls", d)?,
        blocks,
        norm_gamma: r.vec("norm_f.gamma", d)?,
        norm_beta: r.vec("norm_f.beta", d)?,
        head: r.linear("head", d, cfg.classes, Activation::None)?,
        quant: r.quant.map(|(q, _)| q),
        cfg,
    };
    m.validate()?;
    Ok(m)
}

pub fn save_model(m: &VimModel, path: impl AsRef<Path>) -> Result<()> {
    model_to_container(m)?.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<VimModel> {
    model_from_container(&Container::load(path)?)
}

/// Container of every quantized linear site's packed blob.
pub fn blobs_to_container(m: &VimModel) -> Result<Container> {
    let mut c = Container::new();
    for (name, site) in m.linear_sites() {
        if let SiteKind::Quant(q) = &site.kind {
            q.blob.write_into(&mut c, &name)?;
        }
    }
    Ok(c)
}

pub fn save_blobs(m: &VimModel, path: impl AsRef<Path>) -> Result<()> {
    blobs_to_container(m)?.save(path)
}

/// Replaces the blobs of quantized sites with those stored in `c`.
pub fn load_blobs(m: &mut VimModel, c: &Container) -> Result<()> {
    for (name, site) in m.linear_sites_mut() {
        if let SiteKind::Quant(q) = &mut site.kind {
            let blob = PackedWeightBlob::read_from(c, &name).map_err(|e| e.context(&name))?;
            q.set_blob(blob).map_err(|e| e.context(&name))?;
        }
    }
    Ok(())
}
