//! Independent reference implementations.
//!
//! None of this is used by the engines. Each function recomputes a result
//! from the defining formula, in the most direct form available, so that
//! tests and `selftest` can compare the datapath models against it.

use crate::aux::NormKind;
use crate::error::{Error, Result};
use crate::linear::{ActOffsetLut, Activation};
use crate::mat::Mat;
use crate::quant::ApotCodebook;
use crate::ssm::{SsmFloat, SsmParams};

/// `x * level * 2^F` from the level's real value, in i64.
pub fn exact_product(x: i8, level: f32, f_bits: u32) -> i64 {
    let scaled = level as f64 * (1u64 << f_bits) as f64;
    assert_eq!(scaled.fract(), 0.0, "level {level} is not a multiple of 2^-{f_bits}");
    x as i64 * scaled as i64
}

/// Per-token int8 quantization written out from its definition.
pub fn quantize_token_direct(x: &[f32]) -> (Vec<i8>, f32) {
    let mut m = 0.0f32;
    for v in x {
        if v.abs() > m {
            m = v.abs();
        }
    }
    let scale = if m == 0.0 { 1.0 } else { m / 127.0 };
    let q = x
        .iter()
        .map(|&v| {
            let r = v as f64 / scale as f64;
            let r = if r >= 0.0 { (r + 0.5).floor() } else { -((-r + 0.5).floor()) };
            r.clamp(-127.0, 127.0) as i8
        })
        .collect();
    (q, scale)
}

/// Naive `act(x @ w^T + bias)` with explicit index arithmetic.
pub fn naive_gemm(x: &Mat, w: &[f32], out_dim: usize, bias: &[f32], act: Activation) -> Mat {
    let in_dim = x.cols;
    let mut y = vec![0.0f32; x.rows * out_dim];
    for r in 0..x.rows {
        for o in 0..out_dim {
            let mut acc = 0.0f32;
            for i in 0..in_dim {
                acc += x.data[r * in_dim + i] * w[o * in_dim + i];
            }
            y[r * out_dim + o] = act.apply(acc + bias[o]);
        }
    }
    Mat { rows: x.rows, cols: out_dim, data: y }
}

/// A quantized linear layer described by its raw codes.
pub struct StagedLinear<'a> {
    pub codes: &'a [u8],
    pub scales: &'a [f32],
    pub block: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub bias: &'a [f32],
    pub act: Activation,
}

/// Quantize each token, dequantize the codes to exact level integers, form
/// integer sums over each row-block piece, then scale, bias and activate.
pub fn staged_linear(x: &Mat, l: &StagedLinear<'_>, codebook: &ApotCodebook, f_bits: u32) -> Result<Mat> {
    let lut = match l.act {
        Activation::Silu | Activation::Softplus => Some(ActOffsetLut::with_defaults(l.act)),
        _ => None,
    };
    let levels: Vec<i64> = codebook
        .levels()
        .iter()
        .map(|&lv| exact_product(1, lv, f_bits))
        .collect();
    let mb = codebook.magnitude_bits();
    let mut y = Mat::zeros(x.rows, l.out_dim);
    for r in 0..x.rows {
        let (q, s) = quantize_token_direct(x.row(r));
        for o in 0..l.out_dim {
            let mut acc = 0.0f32;
            let mut cur_block = usize::MAX;
            let mut sum = 0i64;
            for i in 0..l.in_dim {
                let flat = o * l.in_dim + i;
                let blk = flat / l.block;
                if blk != cur_block {
                    if cur_block != usize::MAX {
                        acc += i32::try_from(sum).map_err(|_| Error::Overflow(format!("oracle block sum {sum}")))? as f32 * l.scales[cur_block];
                    }
                    cur_block = blk;
                    sum = 0;
                }
                let code = l.codes[flat];
                let mag = (code as usize) & ((1 << mb) - 1);
                let sign = if (code >> mb) & 1 == 1 { -1 } else { 1 };
                sum += sign * q[i] as i64 * levels[mag];
            }
            if cur_block != usize::MAX {
                acc += i32::try_from(sum).map_err(|_| Error::Overflow(format!("oracle block sum {sum}")))? as f32 * l.scales[cur_block];
            }
            let v = acc * (s * (-(f_bits as f32)).exp2()) + l.bias[o];
            y.data[r * l.out_dim + o] = match (&lut, l.act) {
                (Some(t), _) => t.apply(v),
                (None, Activation::Relu) => v.max(0.0),
                _ => v,
            };
        }
    }
    Ok(y)
}

/// Direct causal depthwise conv: `y[t, c] = sum_j w[c, j] x[t + j - K + 1, c]`.
pub fn naive_conv(x: &Mat, w: &[f32], bias: &[f32], kernel: usize) -> Mat {
    let e = x.cols;
    let mut y = Mat::zeros(x.rows, e);
    for t in 0..x.rows {
        for c in 0..e {
            let mut acc = 0.0f32;
            for j in 0..kernel {
                let src = t as isize + j as isize - (kernel as isize - 1);
                let v = if src >= 0 { x.data[src as usize * e + c] } else { 0.0 };
                acc += w[c * kernel + j] * v;
            }
            y.data[t * e + c] = acc + bias[c];
        }
    }
    y
}

/// Quantized conv from the same staged definition as [`staged_linear`]:
/// each tap's exact integer product is scaled by its token's scale.
pub fn staged_conv(x: &Mat, codes: &[u8], scales: &[f32], bias: &[f32], kernel: usize, codebook: &ApotCodebook, f_bits: u32) -> Mat {
    let e = x.cols;
    let toks: Vec<(Vec<i8>, f32)> = (0..x.rows).map(|t| quantize_token_direct(x.row(t))).collect();
    let mb = codebook.magnitude_bits();
    let mut y = Mat::zeros(x.rows, e);
    for t in 0..x.rows {
        for c in 0..e {
            let mut acc = 0.0f32;
            for j in 0..kernel {
                let src = t as isize + j as isize - (kernel as isize - 1);
                let (q, s) = if src >= 0 { (toks[src as usize].0[c], toks[src as usize].1) } else { (0, 1.0) };
                let code = codes[c * kernel + j];
                let level = codebook.levels()[(code as usize) & ((1 << mb) - 1)];
                let mut p = exact_product(q, level, f_bits);
                if (code >> mb) & 1 == 1 {
                    p = -p;
                }
                acc += p as f32 * s;
            }
            y.data[t * e + c] = acc * (scales[c] * (-(f_bits as f32)).exp2()) + bias[c];
        }
    }
    y
}

/// The selective-SSM recurrence as a plain scalar loop, sequential sums.
pub fn ssm_recurrence<F: SsmFloat>(p: &SsmParams<F>) -> Vec<F> {
    let (l, dd, n) = (p.len, p.dim, p.state);
    let mut h = vec![F::zero(); dd * n];
    let mut out = vec![F::zero(); l * dd];
    for t in 0..l {
        for d in 0..dd {
            let delta = p.delta[t * dd + d];
            let mut y = F::zero();
            for s in 0..n {
                let abar = (delta * p.a[d * n + s]).exp();
                h[d * n + s] = h[d * n + s] * abar + delta * p.u[t * dd + d] * p.b[t * n + s];
                y = y + h[d * n + s] * p.c[t * n + s];
            }
            out[t * dd + d] = (y + p.u[t * dd + d] * p.d_skip[d]) * p.z[t * dd + d];
        }
    }
    out
}

/// Recursive pairwise sum of `a[i] * b[i]` over a power-of-two padded range;
/// padded slots are absent rather than zero.
pub fn pairwise_dot<F: SsmFloat>(a: &[F], b: &[F]) -> F {
    fn rec<F: SsmFloat>(a: &[F], b: &[F], lo: usize, width: usize) -> Option<F> {
        if lo >= a.len() {
            return None;
        }
        if width == 1 {
            return Some(a[lo] * b[lo]);
        }
        let half = width / 2;
        match (rec(a, b, lo, half), rec(a, b, lo + half, half)) {
            (Some(x), Some(y)) => Some(x + y),
            (x, None) => x,
            (None, y) => y,
        }
    }
    rec(a, b, 0, a.len().max(1).next_power_of_two()).unwrap_or_else(F::zero)
}

/// Textbook normalization in f64.
pub fn norm_f64(x: &[f32], kind: NormKind, gamma: &[f32], beta: &[f32], eps: f32) -> Vec<f64> {
    let n = x.len() as f64;
    let xs: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let (mean, var) = match kind {
        NormKind::Rms => (0.0, xs.iter().map(|v| v * v).sum::<f64>() / n),
        NormKind::Layer => {
            let m = xs.iter().sum::<f64>() / n;
            (m, xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
        }
    };
    xs.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (&g, &b))| (v - mean) / (var + eps as f64).sqrt() * g as f64 + b as f64)
        .collect()
}

/// Whether `chosen` is at least as close to `|w| / s` (in absolute terms,
/// `|level * s - |w||`) as every other level.
pub fn is_nearest_level(w: f32, scale: f32, chosen: usize, codebook: &ApotCodebook) -> bool {
    let d = |lv: f32| (lv as f64 * scale as f64 - w.abs() as f64).abs();
    let best = codebook.levels().iter().map(|&lv| d(lv)).fold(f64::INFINITY, f64::min);
    d(codebook.levels()[chosen]) <= best
}

/// Elementwise `|a - b| / max(|b|, floor)` maximum.
pub fn max_rel_error<F: SsmFloat>(a: &[F], b: &[F], floor: F) -> F {
    a.iter().zip(b).fold(F::zero(), |m, (&x, &y)| {
        let r = (x - y).abs() / y.abs().max(floor);
        if r > m {
            r
        } else {
            m
        }
    })
}
