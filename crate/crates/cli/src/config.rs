//! Optional TOML run configuration.
//!
//! Every key is optional; a flag given on the command line wins over the
//! file. Recognised keys:
//!
//! ```toml
//! variant = "tiny"        # tiny | small | base
//! blocks = 24
//! classes = 1000
//! cls = "middle"          # head | middle | tail
//! norm = "rms"            # rms | layer
//! height = 224
//! width = 224
//! bits = 4
//! block = 32
//! alpha = 0.5
//! smooth = true
//! static_act = false
//! per_tensor_act = false
//! exp_mode = "exact"      # exact | approx
//! nb = 16
//! mode = "quantized"      # quantized | float | both
//! threads = 4
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use vimq_core::aux::NormKind;
use vimq_core::model::{ClsPosition, Variant};
use vimq_core::ssm::ExpMode;

use crate::Mode;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub variant: Option<Variant>,
    pub blocks: Option<usize>,
    pub classes: Option<usize>,
    pub cls: Option<ClsPosition>,
    pub norm: Option<NormKind>,
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub bits: Option<u32>,
    pub block: Option<usize>,
    pub alpha: Option<f32>,
    pub smooth: Option<bool>,
    pub static_act: Option<bool>,
    pub per_tensor_act: Option<bool>,
    pub exp_mode: Option<ExpMode>,
    pub nb: Option<usize>,
    pub mode: Option<Mode>,
    pub threads: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
