//! Model parameter containers.

use super::config::{QuantConfig, VimConfig};
use crate::aux::{CausalConvConfig, QuantizedConv};
use crate::error::{Error, Result};
use crate::linear::{Activation, QuantizedLinear};
use crate::quant::{dequantize_weights, ActQuant, ApotCodebook};

/// Weights of one linear site.
#[derive(Debug, Clone)]
pub enum SiteKind {
    /// Row-major `[out, in]` float weights.
    Float { w: Vec<f32>, out_dim: usize, in_dim: usize, bias: Vec<f32>, act: Activation },
    Quant(QuantizedLinear),
}

/// A linear layer plus how its input is prepared.
#[derive(Debug, Clone)]
pub struct LinearSite {
    pub kind: SiteKind,
    /// Explicit smoothing: inputs are divided by these per-channel factors
    /// before the layer (used where a nonlinearity blocks fusion).
    pub pre_scale: Option<Vec<f32>>,
    /// Activation quantization of quantized sites.
    pub act_quant: ActQuant,
}

impl LinearSite {
    pub fn float(w: Vec<f32>, out_dim: usize, in_dim: usize, bias: Vec<f32>, act: Activation) -> Result<Self> {
        if w.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!("float linear {in_dim}->{out_dim} with {} weights, {} biases", w.len(), bias.len())));
        }
        Ok(Self {
            kind: SiteKind::Float { w, out_dim, in_dim, bias, act },
            pre_scale: None,
            act_quant: ActQuant::DynamicPerToken,
        })
    }

    pub fn out_dim(&self) -> usize {
        match &self.kind {
            SiteKind::Float { out_dim, .. } => *out_dim,
            SiteKind::Quant(q) => q.out_dim(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match &self.kind {
            SiteKind::Float { in_dim, .. } => *in_dim,
            SiteKind::Quant(q) => q.in_dim(),
        }
    }

    pub fn act(&self) -> Activation {
        match &self.kind {
            SiteKind::Float { act, .. } => *act,
            SiteKind::Quant(q) => q.act,
        }
    }

    pub fn bias(&self) -> &[f32] {
        match &self.kind {
            SiteKind::Float { bias, .. } => bias,
            SiteKind::Quant(q) => &q.bias,
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.kind, SiteKind::Quant(_))
    }

    /// Float weights, dequantizing if needed.
    pub fn float_weights(&self, codebook: Option<&ApotCodebook>) -> Result<Vec<f32>> {
        match &self.kind {
            SiteKind::Float { w, .. } => Ok(w.clone()),
            SiteKind::Quant(q) => {
                let cb = codebook.ok_or_else(|| Error::Config("dequantizing needs the codebook".into()))?;
                dequantize_weights(&q.weights, cb)
            }
        }
    }

    /// The same site with float weights (dequantized for quantized sites).
    pub fn to_float(&self, codebook: Option<&ApotCodebook>) -> Result<Self> {
        let mut s = Self::float(self.float_weights(codebook)?, self.out_dim(), self.in_dim(), self.bias().to_vec(), self.act())?;
        s.pre_scale = self.pre_scale.clone();
        Ok(s)
    }
}

/// Depthwise conv weights `[E, K]`.
#[derive(Debug, Clone)]
pub enum ConvSite {
    Float { cfg: CausalConvConfig, w: Vec<f32>, bias: Vec<f32> },
    Quant { conv: QuantizedConv, act_quant: ActQuant },
}

impl ConvSite {
    pub fn cfg(&self) -> CausalConvConfig {
        match self {
            ConvSite::Float { cfg, .. } => *cfg,
            ConvSite::Quant { conv, .. } => conv.cfg,
        }
    }

    pub fn float_weights(&self, codebook: Option<&ApotCodebook>) -> Result<Vec<f32>> {
        match self {
            ConvSite::Float { w, .. } => Ok(w.clone()),
            ConvSite::Quant { conv, .. } => {
                let cb = codebook.ok_or_else(|| Error::Config("dequantizing needs the codebook".into()))?;
                dequantize_weights(&conv.weights, cb)
            }
        }
    }

    pub fn bias(&self) -> &[f32] {
        match self {
            ConvSite::Float { bias, .. } => bias,
            ConvSite::Quant { conv, .. } => &conv.bias,
        }
    }
}

/// One scan direction.
#[derive(Debug, Clone)]
pub struct DirWeights {
    pub conv: ConvSite,
    /// `E -> dt_rank + 2N`, output columns `[dt | B | C]`.
    pub x_proj: LinearSite,
    /// `dt_rank -> E` with SoftPlus.
    pub dt_proj: LinearSite,
    /// `[E, N]`, negative.
    pub a: Vec<f32>,
    /// `[E]`
    pub d_skip: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub norm_gamma: Vec<f32>,
    pub norm_beta: Vec<f32>,
    /// `d -> 2E`, output columns `[x | z]`.
    pub in_proj: LinearSite,
    pub fwd: DirWeights,
    pub bwd: DirWeights,
    /// `E -> d`
    pub out_proj: LinearSite,
}

#[derive(Debug, Clone)]
pub struct VimModel {
    pub cfg: VimConfig,
    /// Set for quantized models.
    pub quant: Option<QuantConfig>,
    /// `C*P*P -> d`
    pub patch_embed: LinearSite,
    pub cls: Vec<f32>,
    pub blocks: Vec<BlockWeights>,
    pub norm_gamma: Vec<f32>,
    pub norm_beta: Vec<f32>,
    /// `d -> classes`
    pub head: LinearSite,
}

impl VimModel {
    pub fn codebook(&self) -> Result<Option<ApotCodebook>> {
        self.quant.as_ref().map(|q| q.codebook()).transpose()
    }

    pub fn is_quantized(&self) -> bool {
        self.quant.is_some()
    }

    /// Every linear site with its canonical name, in execution order.
    pub fn linear_sites(&self) -> Vec<(String, &LinearSite)> {
        let mut v = vec![("patch_embed".to_string(), &self.patch_embed)];
        for (i, b) in self.blocks.iter().enumerate() {
            v.push((format!("blocks.{i}.in_proj"), &b.in_proj));
            for (dn, d) in [("fwd", &b.fwd), ("bwd", &b.bwd)] {
                v.push((format!("blocks.{i}.{dn}.x_proj"), &d.x_proj));
                v.push((format!("blocks.{i}.{dn}.dt_proj"), &d.dt_proj));
            }
            v.push((format!("blocks.{i}.out_proj"), &b.out_proj));
        }
        v.push(("head".to_string(), &self.head));
        v
    }

    pub fn linear_sites_mut(&mut self) -> Vec<(String, &mut LinearSite)> {
        let mut v = vec![("patch_embed".to_string(), &mut self.patch_embed)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            v.push((format!("blocks.{i}.in_proj"), &mut b.in_proj));
            for (dn, d) in [("fwd", &mut b.fwd), ("bwd", &mut b.bwd)] {
                v.push((format!("blocks.{i}.{dn}.x_proj"), &mut d.x_proj));
                v.push((format!("blocks.{i}.{dn}.dt_proj"), &mut d.dt_proj));
            }
            v.push((format!("blocks.{i}.out_proj"), &mut b.out_proj));
        }
        v.push(("head".to_string(), &mut self.head));
        v
    }

    /// The float model executing this model's (dequantized) weights.
    pub fn dequantized(&self) -> Result<VimModel> {
        let cb = self.codebook()?;
        let cb = cb.as_ref();
        let conv = |c: &ConvSite| -> Result<ConvSite> {
            Ok(ConvSite::Float { cfg: c.cfg(), w: c.float_weights(cb)?, bias: c.bias().to_vec() })
        };
        let dir = |d: &DirWeights| -> Result<DirWeights> {
            Ok(DirWeights {
                conv: conv(&d.conv)?,
                x_proj: d.x_proj.to_float(cb)?,
                dt_proj: d.dt_proj.to_float(cb)?,
                a: d.a.clone(),
                d_skip: d.d_skip.clone(),
            })
        };
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                Ok(BlockWeights {
                    norm_gamma: b.norm_gamma.clone(),
                    norm_beta: b.norm_beta.clone(),
                    in_proj: b.in_proj.to_float(cb)?,
                    fwd: dir(&b.fwd)?,
                    bwd: dir(&b.bwd)?,
                    out_proj: b.out_proj.to_float(cb)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(VimModel {
            cfg: self.cfg.clone(),
            quant: None,
            patch_embed: self.patch_embed.to_float(cb)?,
            cls: self.cls.clone(),
            blocks,
            norm_gamma: self.norm_gamma.clone(),
            norm_beta: self.norm_beta.clone(),
            head: self.head.to_float(cb)?,
        })
    }

    /// Checks every tensor against the configuration.
    pub fn validate(&self) -> Result<()> {
        let c = &self.cfg;
        c.validate()?;
        let (d, e, n, r) = (c.d_model, c.inner(), c.state, c.dt_rank());
        let site = |name: &str, s: &LinearSite, i: usize, o: usize| -> Result<()> {
            if s.in_dim() != i || s.out_dim() != o {
                return Err(Error::Shape(format!("{name} is {}->{}, expected {i}->{o}", s.in_dim(), s.out_dim())));
            }
            if let Some(p) = &s.pre_scale {
                if p.len() != i {
                    return Err(Error::Shape(format!("{name} pre-scale has {} entries, expected {i}", p.len())));
                }
            }
            Ok(())
        };
        let vec = |name: &str, v: &[f32], len: usize| -> Result<()> {
            if v.len() != len {
                return Err(Error::Shape(format!("{name} has {} values, expected {len}", v.len())));
            }
            Ok(())
        };
        site("patch_embed", &self.patch_embed, c.in_channels * c.patch * c.patch, d)?;
        site("head", &self.head, d, c.classes)?;
        vec("cls", &self.cls, d)?;
        vec("norm_f.gamma", &self.norm_gamma, d)?;
        vec("norm_f.beta", &self.norm_beta, d)?;
        if self.blocks.len() != c.n_blocks {
            return Err(Error::Shape(format!("{} blocks, config says {}", self.blocks.len(), c.n_blocks)));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            vec(&format!("{p}.norm.gamma"), &b.norm_gamma, d)?;
            vec(&format!("{p}.norm.beta"), &b.norm_beta, d)?;
            site(&format!("{p}.in_proj"), &b.in_proj, d, 2 * e)?;
            site(&format!("{p}.out_proj"), &b.out_proj, e, d)?;
            for (dn, dw) in [("fwd", &b.fwd), ("bwd", &b.bwd)] {
                let q = format!("{p}.{dn}");
                site(&format!("{q}.x_proj"), &dw.x_proj, e, r + 2 * n)?;
                site(&format!("{q}.dt_proj"), &dw.dt_proj, r, e)?;
                vec(&format!("{q}.A"), &dw.a, e * n)?;
                vec(&format!("{q}.D"), &dw.d_skip, e)?;
                let cc = dw.conv.cfg();
                if cc.channels != e || cc.kernel != c.conv_kernel {
                    return Err(Error::Shape(format!("{q}.conv is K={} E={}", cc.kernel, cc.channels)));
                }
            }
        }
        Ok(())
    }
}
