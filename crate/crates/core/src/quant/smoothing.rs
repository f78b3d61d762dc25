//! Per-channel smoothing: `s_j = max|X_j|^alpha / max|W_j|^(1 - alpha)`.
//!
//! Activations are divided by `s` and the consuming weights' input channels
//! multiplied by it. When the producer is linear the division folds into
//! its output channels; otherwise the division stays an explicit per-channel
//! multiply in front of the quantizer.
//!
//! Weights use the `[out, in]` layout throughout, so the producer's output
//! channel `j` is its row `j` and the consumer's input channel `j` its column `j`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingScales {
    pub s: Vec<f32>,
    pub alpha: f32,
}

impl SmoothingScales {
    pub fn identity(channels: usize) -> Self {
        Self { s: vec![1.0; channels], alpha: 0.5 }
    }

    pub fn reciprocal(&self) -> Vec<f32> {
        self.s.iter().map(|s| 1.0 / s).collect()
    }
}

pub fn compute_smoothing(act_absmax: &[f32], w_absmax: &[f32], alpha: f32) -> Result<SmoothingScales> {
    if act_absmax.len() != w_absmax.len() {
        return Err(Error::Shape(format!(
            "{} activation channels vs {} weight channels",
            act_absmax.len(),
            w_absmax.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    if let Some(v) = act_absmax.iter().chain(w_absmax).find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Config(format!("channel maximum {v} must be finite and non-negative")));
    }
    let a = alpha as f64;
    let s = act_absmax
        .iter()
        .zip(w_absmax)
        .map(|(&x, &w)| {
            if x == 0.0 || w == 0.0 {
                return 1.0;
            }
            let s = ((x as f64).powf(a) / (w as f64).powf(1.0 - a)) as f32;
            if s.is_finite() && s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    Ok(SmoothingScales { s, alpha })
}

/// Column-wise absolute maxima of an `[out, in]` weight matrix.
pub fn input_channel_absmax(w: &[f32], out_dim: usize, in_dim: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; in_dim];
    for o in 0..out_dim {
        for (j, v) in w[o * in_dim..(o + 1) * in_dim].iter().enumerate() {
            m[j] = m[j].max(v.abs());
        }
    }
    m
}

/// Divides output rows `rows` of an `[out, in]` matrix (and its bias) by `s`.
pub fn scale_down_rows(w: &mut [f32], bias: Option<&mut [f32]>, in_dim: usize, row_offset: usize, s: &[f32]) {
    for (j, &sj) in s.iter().enumerate() {
        for v in &mut w[(row_offset + j) * in_dim..(row_offset + j + 1) * in_dim] {
            *v /= sj;
        }
    }
    if let Some(b) = bias {
        for (j, &sj) in s.iter().enumerate() {
            b[row_offset + j] /= sj;
        }
    }
}

/// Multiplies input columns of an `[out, in]` matrix by `s`.
pub fn scale_up_columns(w: &mut [f32], out_dim: usize, s: &[f32]) {
    let in_dim = s.len();
    for o in 0..out_dim {
        for (v, &sj) in w[o * in_dim..(o + 1) * in_dim].iter_mut().zip(s) {
            *v *= sj;
        }
    }
}

/// Folds smoothing into an adjacent pair: `upstream` is `[C, in_up]`,
/// `downstream` is `[out, C]`.
pub fn fuse_smoothing(upstream: &Tensor, downstream: &Tensor, s: &SmoothingScales) -> Result<(Tensor, Tensor)> {
    let (us, ds) = (upstream.shape(), downstream.shape());
    if us.len() != 2 || ds.len() != 2 || us[0] != s.s.len() || ds[1] != s.s.len() {
        return Err(Error::Shape(format!(
            "cannot fuse {} smoothing channels between {us:?} and {ds:?}",
            s.s.len()
        )));
    }
    let mut up = upstream.as_f32()?.to_vec();
    let mut down = downstream.as_f32()?.to_vec();
    scale_down_rows(&mut up, None, us[1], 0, &s.s);
    scale_up_columns(&mut down, ds[0], &s.s);
    Ok((Tensor::f32(us, up)?, Tensor::f32(ds, down)?))
}

/// Folds smoothing into a per-channel affine producer (normalization
/// `gamma`/`beta`).
pub fn fuse_into_affine(gamma: &mut [f32], beta: &mut [f32], s: &SmoothingScales) -> Result<()> {
    if gamma.len() != s.s.len() || beta.len() != s.s.len() {
        return Err(Error::Shape("affine parameters and smoothing scales differ in length".into()));
    }
    for ((g, b), &sj) in gamma.iter_mut().zip(beta.iter_mut()).zip(&s.s) {
        *g /= sj;
        *b /= sj;
    }
    Ok(())
}
