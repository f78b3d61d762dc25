//! Depthwise causal convolution as a windowing stage feeding a filter stage.
//!
//! `y[t, c] = sum_j w[c, j] * x[t + j - (K - 1), c]` with zeros before the
//! first token, so `w[K-1]` meets the current token.

use crate::error::{Error, Result};
use crate::linear::lut::{check_preshift, shift_table};
use crate::mat::Mat;
use crate::perf::EngineCounters;
use crate::quant::{quantize_rows, quantize_weights, ActQuant, ApotCodebook, QuantizedWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CausalConvConfig {
    pub kernel: usize,
    pub channels: usize,
}

/// Windowing stage: `[L, K, E]` with `win[t, j, c] = x_pad[t + j, c]`.
pub fn conv_window(x: &Mat, kernel: usize) -> Vec<f32> {
    let (l, e) = (x.rows, x.cols);
    let mut win = vec![0.0f32; l * kernel * e];
    for t in 0..l {
        for j in 0..kernel {
            if let Some(src) = (t + j).checked_sub(kernel - 1) {
                let dst = (t * kernel + j) * e;
                win[dst..dst + e].copy_from_slice(x.row(src));
            }
        }
    }
    win
}

/// Filtering stage over a window tensor; taps accumulate in ascending `j`.
pub fn conv_filter(win: &[f32], len: usize, cfg: &CausalConvConfig, w: &[f32], bias: &[f32]) -> Result<Mat> {
    let (k, e) = (cfg.kernel, cfg.channels);
    if win.len() != len * k * e || w.len() != e * k || bias.len() != e {
        return Err(Error::Shape(format!("conv filter: window {}, weight {}, bias {} for L={len}, K={k}, E={e}", win.len(), w.len(), bias.len())));
    }
    let mut y = Mat::zeros(len, e);
    for t in 0..len {
        for (c, out) in y.row_mut(t).iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for j in 0..k {
                acc += w[c * k + j] * win[(t * k + j) * e + c];
            }
            *out = acc + bias[c];
        }
    }
    Ok(y)
}

fn check(x: &Mat, cfg: &CausalConvConfig) -> Result<()> {
    if cfg.kernel == 0 {
        return Err(Error::Config("conv kernel must be >= 1".into()));
    }
    if x.cols != cfg.channels {
        return Err(Error::Shape(format!("conv over {} channels got {}-wide tokens", cfg.channels, x.cols)));
    }
    Ok(())
}

/// Full-precision causal conv; `w` is `[E, K]`.
pub fn causal_conv(x: &Mat, cfg: &CausalConvConfig, w: &[f32], bias: &[f32]) -> Result<Mat> {
    check(x, cfg)?;
    conv_filter(&conv_window(x, cfg.kernel), x.rows, cfg, w, bias)
}

/// APoT conv weights with one scale per channel (the block is the kernel).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedConv {
    pub cfg: CausalConvConfig,
    pub weights: QuantizedWeights,
    pub bias: Vec<f32>,
}

impl QuantizedConv {
    pub fn from_float(w: &[f32], bias: Vec<f32>, cfg: CausalConvConfig, codebook: &ApotCodebook) -> Result<Self> {
        let weights = quantize_weights(w, &[cfg.channels, cfg.kernel], cfg.kernel, codebook)?;
        Self::new(cfg, weights, bias)
    }

    pub fn new(cfg: CausalConvConfig, weights: QuantizedWeights, bias: Vec<f32>) -> Result<Self> {
        if weights.shape != [cfg.channels, cfg.kernel] || weights.block != cfg.kernel || bias.len() != cfg.channels {
            return Err(Error::Shape(format!(
                "conv weights {:?} (block {}) / bias {} do not fit K={}, E={}",
                weights.shape,
                weights.block,
                bias.len(),
                cfg.kernel,
                cfg.channels
            )));
        }
        Ok(Self { cfg, weights, bias })
    }
}

/// Quantized causal conv.
///
/// Tokens are quantized per token before windowing, so each window slot
/// carries its own `(q, scale)`. A tap contributes the exact shifted product
/// `q * level * 2^F` (an integer), converted to f32 and multiplied by its
/// token scale; taps accumulate in ascending `j`, then the channel scale and
/// `2^-F` are applied as one multiplier, then the bias. Padded slots are
/// `(0, 1.0)`.
pub fn causal_conv_quantized(
    x: &Mat,
    conv: &QuantizedConv,
    codebook: &ApotCodebook,
    f_bits: u32,
    aq: &ActQuant,
) -> Result<(Mat, EngineCounters)> {
    let cfg = &conv.cfg;
    check(x, cfg)?;
    check_preshift(codebook, f_bits)?;
    conv.weights.validate(codebook)?;
    let q = quantize_rows(x, aq)?;
    let (l, k, e) = (x.rows, cfg.kernel, cfg.channels);
    let shifts = shift_table(codebook, f_bits);
    let mb = codebook.magnitude_bits();

    // windowing: (q, scale) per slot
    let mut win_q = vec![0i8; l * k * e];
    let mut win_s = vec![1.0f32; l * k];
    for t in 0..l {
        for j in 0..k {
            if let Some(src) = (t + j).checked_sub(k - 1) {
                let dst = (t * k + j) * e;
                win_q[dst..dst + e].copy_from_slice(q.row(src));
                win_s[t * k + j] = q.scales[src];
            }
        }
    }

    // filtering
    let mult = (-(f_bits as f32)).exp2();
    let mut y = Mat::zeros(l, e);
    for t in 0..l {
        for (c, out) in y.row_mut(t).iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for j in 0..k {
                let code = conv.weights.codes[c * k + j];
                let xq = win_q[(t * k + j) * e + c] as i32;
                let mag = (code & ((1u8 << mb) - 1)) as usize;
                let mut p: i32 = shifts[mag].iter().flatten().map(|&s| xq << s).sum();
                if (code >> mb) & 1 == 1 {
                    p = -p;
                }
                acc += p as f32 * win_s[t * k + j];
            }
            *out = acc * (conv.weights.scales[c] * mult) + conv.bias[c];
        }
    }
    if let Some((t, c)) = y.first_non_finite() {
        return Err(Error::NonFinite(format!("conv output at token {t}, channel {c}")));
    }
    let counters = EngineCounters {
        tokens: l as u64,
        macs: (l * k * e) as u64,
        pe_selects: (l * k * e) as u64,
        lut_builds: l as u64,
        ..Default::default()
    };
    Ok((y, counters))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_one_scales_channels() {
        let x = Mat::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let cfg = CausalConvConfig { kernel: 1, channels: 2 };
        let y = causal_conv(&x, &cfg, &[2.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(y.data, vec![2.0, -2.0, 6.0, -4.0]);
    }

    #[test]
    fn impulse_response_orientation() {
        let mut x = Mat::zeros(6, 1);
        x.data[0] = 1.0;
        let cfg = CausalConvConfig { kernel: 4, channels: 1 };
        let y = causal_conv(&x, &cfg, &[1.0, 2.0, 3.0, 4.0], &[0.0]).unwrap();
        assert_eq!(y.data, vec![4.0, 3.0, 2.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn quantized_impulse() {
        let cb = ApotCodebook::w4();
        let cfg = CausalConvConfig { kernel: 4, channels: 1 };
        // levels 1/8, 1/4, 1/2, 5/8 of scale 1.6 (absmax 1.6 maps to 5/8)
        let w = [0.2f32, 0.4, 0.8, 1.6];
        let conv = QuantizedConv::from_float(&w, vec![0.0], cfg, &cb).unwrap();
        let mut x = Mat::zeros(5, 1);
        x.data[0] = 1.0;
        let (y, _) = causal_conv_quantized(&x, &conv, &cb, 8, &ActQuant::DynamicPerToken).unwrap();
        let expect = [0.625 * 1.6, 0.5 * 1.6, 0.25 * 1.6, 0.125 * 1.6, 0.0];
        for (a, b) in y.data.iter().zip(expect) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
