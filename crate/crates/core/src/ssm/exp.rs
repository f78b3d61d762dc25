//! Exponential used by discretization.

use serde::{Deserialize, Serialize};

use super::SsmFloat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpMode {
    #[default]
    Exact,
    /// Piecewise-linear table, see [`ExpTable`].
    Approx,
}

pub const APPROX_SEGMENTS: usize = 256;
pub const APPROX_LOW: f64 = -16.0;

/// `exp` on `[-16, 0]` by linear interpolation over 256 equal segments.
/// Arguments outside the domain are clamped to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpTable {
    knots: Vec<f64>,
}

impl Default for ExpTable {
    fn default() -> Self {
        Self::new()
    }
}

impl ExpTable {
    pub fn new() -> Self {
        let step = -APPROX_LOW / APPROX_SEGMENTS as f64;
        Self { knots: (0..=APPROX_SEGMENTS).map(|k| (APPROX_LOW + k as f64 * step).exp()).collect() }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pos = (x.clamp(APPROX_LOW, 0.0) - APPROX_LOW) / -APPROX_LOW * APPROX_SEGMENTS as f64;
        let i = (pos as usize).min(APPROX_SEGMENTS - 1);
        let frac = pos - i as f64;
        self.knots[i] + frac * (self.knots[i + 1] - self.knots[i])
    }

    #[inline]
    pub fn apply<F: SsmFloat>(&self, mode: ExpMode, x: F) -> F {
        match mode {
            ExpMode::Exact => x.exp(),
            ExpMode::Approx => F::from(self.eval(x.to_f64().unwrap_or(f64::NAN))).unwrap_or(F::nan()),
        }
    }
}
