//! Symmetric int8 activation quantization.
//!
//! The default is dynamic per-token: each token's scale is its runtime
//! absolute maximum over 127. The other modes exist for ablations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

pub const QMAX: f32 = 127.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenQuant {
    pub q: Vec<i8>,
    pub scale: f32,
}

/// Scale from an absolute maximum; an all-zero range maps to scale 1.
#[inline]
pub fn scale_for_absmax(absmax: f32) -> f32 {
    if absmax == 0.0 {
        1.0
    } else {
        absmax / QMAX
    }
}

/// Round-half-away-from-zero of `x / scale`, clamped to [-127, 127].
///
/// The quotient is formed in f64 where the rounding decision is exact for
/// f32 operands, so `|x - q * scale| <= scale / 2` holds without slack.
#[inline]
pub fn quantize_value(x: f32, scale: f32) -> i8 {
    let r = (x as f64 / scale as f64).round();
    r.clamp(-(QMAX as f64), QMAX as f64) as i8
}

fn check_finite(x: &[f32]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("activation element {i} is {}", x[i]))),
        None => Ok(()),
    }
}

fn absmax(x: &[f32]) -> f32 {
    x.iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

pub fn quantize_token(x: &[f32]) -> Result<TokenQuant> {
    check_finite(x)?;
    let scale = scale_for_absmax(absmax(x));
    Ok(TokenQuant { q: x.iter().map(|&v| quantize_value(v, scale)).collect(), scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActQuantKind {
    #[default]
    DynamicPerToken,
    DynamicPerTensor,
    StaticPerTensor,
    StaticPerPosition,
}

impl ActQuantKind {
    pub fn tag(self) -> i32 {
        self as i32
    }

    pub fn from_tag(tag: i32) -> Result<Self> {
        Ok(match tag {
            0 => Self::DynamicPerToken,
            1 => Self::DynamicPerTensor,
            2 => Self::StaticPerTensor,
            3 => Self::StaticPerPosition,
            t => return Err(Error::Format(format!("unknown activation quantization tag {t}"))),
        })
    }

    pub fn is_static(self) -> bool {
        matches!(self, Self::StaticPerTensor | Self::StaticPerPosition)
    }
}

/// Activation quantization policy for one engine invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum ActQuant {
    DynamicPerToken,
    DynamicPerTensor,
    /// Calibrated scale shared by every token.
    StaticPerTensor(f32),
    /// Calibrated scale per token position.
    StaticPerPosition(Vec<f32>),
}

/// Per-row scales of a quantized activation matrix.
pub type ActScales = Vec<f32>;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedRows {
    pub rows: usize,
    pub cols: usize,
    pub q: Vec<i8>,
    pub scales: ActScales,
}

impl QuantizedRows {
    pub fn row(&self, r: usize) -> &[i8] {
        &self.q[r * self.cols..(r + 1) * self.cols]
    }
}

pub fn quantize_rows(x: &Mat, mode: &ActQuant) -> Result<QuantizedRows> {
    check_finite(&x.data)?;
    let scales: Vec<f32> = match mode {
        ActQuant::DynamicPerToken => (0..x.rows).map(|r| scale_for_absmax(absmax(x.row(r)))).collect(),
        ActQuant::DynamicPerTensor => vec![scale_for_absmax(absmax(&x.data)); x.rows],
        ActQuant::StaticPerTensor(s) => vec![*s; x.rows],
        ActQuant::StaticPerPosition(s) => {
            if s.len() != x.rows {
                return Err(Error::Shape(format!(
                    "{} calibrated positions but {} tokens at inference",
                    s.len(),
                    x.rows
                )));
            }
            s.clone()
        }
    };
    if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Config(format!("activation scale {s} is not positive")));
    }
    let mut q = Vec::with_capacity(x.data.len());
    for (r, &s) in scales.iter().enumerate() {
        q.extend(x.row(r).iter().map(|&v| quantize_value(v, s)));
    }
    Ok(QuantizedRows { rows: x.rows, cols: x.cols, q, scales })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_example() {
        let tq = quantize_token(&[0.5, -1.0, 0.25]).unwrap();
        assert_eq!(tq.scale, 1.0 / 127.0);
        assert_eq!(tq.q, vec![64, -127, 32]);
    }

    #[test]
    fn zero_token() {
        let tq = quantize_token(&[0.0; 3]).unwrap();
        assert_eq!(tq.scale, 1.0);
        assert_eq!(tq.q, vec![0, 0, 0]);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(quantize_token(&[1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn static_modes_clip() {
        let x = Mat::new(2, 2, vec![1.0, -3.0, 0.5, 0.25]).unwrap();
        let q = quantize_rows(&x, &ActQuant::StaticPerTensor(1.0 / 127.0)).unwrap();
        assert_eq!(q.q, vec![127, -127, 64, 32]);
        assert!(quantize_rows(&x, &ActQuant::StaticPerPosition(vec![1.0])).is_err());
        let t = quantize_rows(&x, &ActQuant::DynamicPerTensor).unwrap();
        assert_eq!(t.scales, vec![3.0 / 127.0; 2]);
    }
}
