//! Model and quantization configuration.

use serde::{Deserialize, Serialize};

use crate::aux::NormKind;
use crate::error::{Error, Result};
use crate::linear::TileConfig;
use crate::quant::{ActQuantKind, ApotCodebook};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Tiny,
    Small,
    Base,
}

impl Variant {
    pub fn hidden(self) -> usize {
        match self {
            Variant::Tiny => 192,
            Variant::Small => 384,
            Variant::Base => 768,
        }
    }

    pub fn tag(self) -> i32 {
        self as i32
    }

    pub fn from_tag(tag: i32) -> Result<Self> {
        match tag {
            0 => Ok(Variant::Tiny),
            1 => Ok(Variant::Small),
            2 => Ok(Variant::Base),
            t => Err(Error::Format(format!("unknown variant tag {t}"))),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(Variant::Tiny),
            "small" => Ok(Variant::Small),
            "base" => Ok(Variant::Base),
            _ => Err(Error::Config(format!("unknown variant `{s}` (tiny, small, base)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClsPosition {
    Head,
    #[default]
    Middle,
    Tail,
}

impl ClsPosition {
    pub fn index(self, tokens: usize) -> usize {
        match self {
            ClsPosition::Head => 0,
            ClsPosition::Middle => tokens / 2,
            ClsPosition::Tail => tokens,
        }
    }

    pub fn tag(self) -> i32 {
        self as i32
    }

    pub fn from_tag(tag: i32) -> Result<Self> {
        match tag {
            0 => Ok(ClsPosition::Head),
            1 => Ok(ClsPosition::Middle),
            2 => Ok(ClsPosition::Tail),
            t => Err(Error::Format(format!("unknown CLS position tag {t}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VimConfig {
    pub variant: Variant,
    pub d_model: usize,
    pub n_blocks: usize,
    pub state: usize,
    pub expand: usize,
    pub conv_kernel: usize,
    pub patch: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub cls: ClsPosition,
    pub norm: NormKind,
    pub norm_eps: f32,
}

impl VimConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            d_model: variant.hidden(),
            n_blocks: 24,
            state: 16,
            expand: 2,
            conv_kernel: 4,
            patch: 16,
            in_channels: 3,
            classes: 1000,
            cls: ClsPosition::Middle,
            norm: NormKind::Rms,
            norm_eps: 1e-5,
        }
    }

    pub fn inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn dt_rank(&self) -> usize {
        self.d_model.div_ceil(16)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_blocks", self.n_blocks),
            ("state", self.state),
            ("expand", self.expand),
            ("conv_kernel", self.conv_kernel),
            ("patch", self.patch),
            ("in_channels", self.in_channels),
            ("classes", self.classes),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Quantization settings recorded with a quantized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantConfig {
    pub bits: u32,
    pub coarse: Vec<u32>,
    pub fine: Vec<u32>,
    pub block: usize,
    pub tile: usize,
    pub f_bits: u32,
    pub alpha: f32,
    pub smooth: bool,
    pub act: ActQuantKind,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self::for_bits(4).expect("4-bit default")
    }
}

impl QuantConfig {
    /// Defaults with the built-in basis for `bits`.
    pub fn for_bits(bits: u32) -> Result<Self> {
        let cb = ApotCodebook::default_for_bits(bits)?;
        Ok(Self {
            bits,
            coarse: cb.coarse_exponents().to_vec(),
            fine: cb.fine_exponents().to_vec(),
            block: 32,
            tile: 32,
            f_bits: 8,
            alpha: 0.5,
            smooth: true,
            act: ActQuantKind::DynamicPerToken,
        })
    }

    pub fn codebook(&self) -> Result<ApotCodebook> {
        let cb = crate::quant::build_codebook(&self.coarse, &self.fine)?;
        if cb.code_bits() != self.bits {
            return Err(Error::Config(format!(
                "basis gives {}-bit codes but {} bits were requested",
                cb.code_bits(),
                self.bits
            )));
        }
        Ok(cb)
    }

    pub fn tile_config(&self) -> TileConfig {
        TileConfig { tile: self.tile, f_bits: self.f_bits }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block == 0 {
            return Err(Error::Config("block size must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        let cb = self.codebook()?;
        self.tile_config().validate(&cb)
    }
}
