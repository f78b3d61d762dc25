//! Per-token normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Rms,
    Layer,
}

impl NormKind {
    pub fn tag(self) -> i32 {
        self as i32
    }

    pub fn from_tag(tag: i32) -> Result<Self> {
        match tag {
            0 => Ok(Self::Rms),
            1 => Ok(Self::Layer),
            t => Err(Error::Format(format!("unknown norm tag {t}"))),
        }
    }
}

/// RMSNorm: `x / sqrt(mean(x^2) + eps) * gamma + beta`.
/// LayerNorm: `(x - mean) / sqrt(var + eps) * gamma + beta`.
/// Moments are accumulated in f64.
pub fn normalize(x: &Mat, kind: NormKind, gamma: &[f32], beta: &[f32], eps: f32) -> Result<Mat> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("norm epsilon must be positive, got {eps}")));
    }
    if gamma.len() != x.cols || beta.len() != x.cols {
        return Err(Error::Shape(format!("norm over {} features with {}/{} affine params", x.cols, gamma.len(), beta.len())));
    }
    let n = x.cols as f64;
    let mut y = Mat::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let (mean, denom) = match kind {
            NormKind::Rms => (0.0, row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n),
            NormKind::Layer => {
                let m = row.iter().map(|&v| v as f64).sum::<f64>() / n;
                (m, row.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n)
            }
        };
        let inv = 1.0 / (denom + eps as f64).sqrt();
        for ((o, &v), (&g, &b)) in y.row_mut(r).iter_mut().zip(row).zip(gamma.iter().zip(beta)) {
            *o = (((v as f64 - mean) * inv) as f32) * g + b;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_token_layernorm() {
        let x = Mat::new(1, 4, vec![3.0; 4]).unwrap();
        let y = normalize(&x, NormKind::Layer, &[2.0; 4], &[0.5; 4], 1e-5).unwrap();
        assert_eq!(y.data, vec![0.5; 4]);
    }

    #[test]
    fn unit_rms() {
        let x = Mat::new(1, 4, vec![1.0, -1.0, 1.0, -1.0]).unwrap();
        let y = normalize(&x, NormKind::Rms, &[1.0, 2.0, 3.0, 4.0], &[0.0; 4], 1e-12).unwrap();
        for (a, b) in y.data.iter().zip([1.0, -2.0, 3.0, -4.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(normalize(&Mat::zeros(1, 1), NormKind::Rms, &[1.0], &[0.0], 0.0).is_err());
    }
}
