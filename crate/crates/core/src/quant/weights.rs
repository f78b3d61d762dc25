//! Per-block APoT weight quantization.
//!
//! The flattened row-major weights are split into blocks of `B` consecutive
//! values (the tail block is implicitly zero-padded). Each block is scaled by
//! its absolute maximum, each magnitude snaps to the nearest codebook level
//! and the sign is kept in the code's top bit. Since the largest level is
//! below one, the block maximum itself lands on `max_level * scale`.

use super::codebook::ApotCodebook;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWeights {
    pub shape: Vec<usize>,
    /// One code per weight, row-major: `(sign << magnitude_bits) | level index`.
    pub codes: Vec<u8>,
    /// One scale per block of `block` consecutive weights.
    pub scales: Vec<f32>,
    pub block: usize,
    pub code_bits: u32,
}

impl QuantizedWeights {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    #[inline]
    pub fn block_of(&self, flat_index: usize) -> usize {
        flat_index / self.block
    }

    /// Code tensor: packed `U4` when codes fit a nibble, else `U8`.
    pub fn codes_tensor(&self) -> Result<Tensor> {
        if self.code_bits <= 4 {
            Tensor::u4_from_codes(&self.shape, &self.codes)
        } else {
            Tensor::u8(&self.shape, self.codes.clone())
        }
    }

    pub fn from_tensors(codes: &Tensor, scales: &Tensor, block: usize, codebook: &ApotCodebook) -> Result<Self> {
        let qw = Self {
            shape: codes.shape().to_vec(),
            codes: codes.codes()?,
            scales: scales.as_f32()?.to_vec(),
            block,
            code_bits: codebook.code_bits(),
        };
        qw.validate(codebook)?;
        Ok(qw)
    }

    pub fn validate(&self, codebook: &ApotCodebook) -> Result<()> {
        if self.block == 0 {
            return Err(Error::Config("block size must be ≥ 1".into()));
        }
        if self.codes.len() != self.numel() || self.scales.len() != self.numel().div_ceil(self.block) {
            return Err(Error::Shape(format!(
                "{} codes / {} scales inconsistent with shape {:?} and block {}",
                self.codes.len(),
                self.scales.len(),
                self.shape,
                self.block
            )));
        }
        if self.code_bits != codebook.code_bits() {
            return Err(Error::Config(format!(
                "{}-bit codes used with a {}-bit codebook",
                self.code_bits,
                codebook.code_bits()
            )));
        }
        for &c in &self.codes {
            codebook.check_code(c)?;
        }
        Ok(())
    }
}

pub fn quantize_weights(w: &[f32], shape: &[usize], block: usize, codebook: &ApotCodebook) -> Result<QuantizedWeights> {
    if block == 0 {
        return Err(Error::Config("block size must be ≥ 1".into()));
    }
    let n: usize = shape.iter().product();
    if w.len() != n {
        return Err(Error::Shape(format!("{} weights for shape {shape:?}", w.len())));
    }
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("weight {i} is {}", w[i])));
    }

    let mut codes = Vec::with_capacity(n);
    let mut scales = Vec::with_capacity(n.div_ceil(block));
    for chunk in w.chunks(block) {
        let absmax = chunk.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if absmax == 0.0 {
            scales.push(1.0);
            codes.extend(std::iter::repeat_n(0u8, chunk.len()));
            continue;
        }
        scales.push(absmax);
        let s = absmax as f64;
        for &v in chunk {
            // |v| / s lies in [0, 1] by construction, so the clamp never binds.
            // Distances are measured as |level * s - |v||, exact in f64.
            let mag = codebook.nearest(v.abs() as f64, |lvl| lvl as f64 * s);
            codes.push(codebook.encode(v < 0.0 && mag != 0, mag));
        }
    }
    Ok(QuantizedWeights { shape: shape.to_vec(), codes, scales, block, code_bits: codebook.code_bits() })
}

/// `sign * level * block_scale`, in f32.
pub fn dequantize_weights(qw: &QuantizedWeights, codebook: &ApotCodebook) -> Result<Vec<f32>> {
    qw.validate(codebook)?;
    Ok(qw
        .codes
        .iter()
        .enumerate()
        .map(|(i, &c)| codebook.signed_level(c) * qw.scales[i / qw.block])
        .collect())
}
