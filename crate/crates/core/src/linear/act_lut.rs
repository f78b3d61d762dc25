//! Activation functions as ReLU plus a tabulated even offset.
//!
//! SiLU and SoftPlus differ from ReLU by `d(x) = f(x) - relu(x)`, and `d` is
//! even, so only `d(|x|)` on `[0, R]` is stored. Lookups interpolate linearly
//! between the two nearest entries; beyond `R` the boundary entry is used.

use super::activation::Activation;
use crate::error::{Error, Result};

pub const DEFAULT_ENTRIES: usize = 128;
pub const DEFAULT_RANGE: f32 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ActOffsetLut {
    func: Activation,
    range: f32,
    entries: Vec<f32>,
}

fn offset_exact(func: Activation, x: f64) -> f64 {
    match func {
        Activation::None | Activation::Relu => 0.0,
        // x * sigmoid(x) - x for x >= 0
        Activation::Silu => -x / (1.0 + x.exp()),
        Activation::Softplus => (-x).exp().ln_1p(),
    }
}

impl ActOffsetLut {
    pub fn new(func: Activation, entries: usize, range: f32) -> Result<Self> {
        if entries < 2 || !(range.is_finite() && range > 0.0) {
            return Err(Error::Config(format!("activation LUT needs >= 2 entries and a positive range, got {entries}, {range}")));
        }
        let step = range as f64 / (entries - 1) as f64;
        let entries = (0..entries).map(|k| offset_exact(func, k as f64 * step) as f32).collect();
        Ok(Self { func, range, entries })
    }

    pub fn with_defaults(func: Activation) -> Self {
        Self::new(func, DEFAULT_ENTRIES, DEFAULT_RANGE).expect("valid defaults")
    }

    pub fn func(&self) -> Activation {
        self.func
    }

    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    /// `d(|x|)` from the half-domain table.
    #[inline]
    pub fn offset(&self, x: f32) -> f32 {
        let last = self.entries.len() - 1;
        let pos = x.abs() / self.range * last as f32;
        if !(pos < last as f32) {
            return self.entries[last];
        }
        let i = pos as usize;
        let frac = pos - i as f32;
        let (a, b) = (self.entries[i], self.entries[i + 1]);
        a + frac * (b - a)
    }

    #[inline]
    pub fn apply(&self, y: f32) -> f32 {
        match self.func {
            Activation::None => y,
            _ => y.max(0.0) + self.offset(y),
        }
    }
}
