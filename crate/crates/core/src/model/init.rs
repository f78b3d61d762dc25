//! Gaussian-initialized models for desk-scale experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::VimConfig;
use super::weights::{BlockWeights, ConvSite, DirWeights, LinearSite, VimModel};
use crate::aux::CausalConvConfig;
use crate::error::Result;
use crate::linear::Activation;

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f32) -> Vec<f32> {
    let d = Normal::new(0.0f32, std).expect("positive std");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn linear(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize, act: Activation) -> Result<LinearSite> {
    let w = gaussian(rng, out_dim * in_dim, 1.0 / (in_dim as f32).sqrt());
    LinearSite::float(w, out_dim, in_dim, vec![0.0; out_dim], act)
}

/// `softplus^-1(y) = y + ln(1 - e^-y)`.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn direction(rng: &mut ChaCha8Rng, cfg: &VimConfig) -> Result<DirWeights> {
    let (e, n, r, k) = (cfg.inner(), cfg.state, cfg.dt_rank(), cfg.conv_kernel);
    let conv = ConvSite::Float {
        cfg: CausalConvConfig { kernel: k, channels: e },
        w: gaussian(rng, e * k, 1.0 / (k as f32).sqrt()),
        bias: vec![0.0; e],
    };
    let x_proj = linear(rng, r + 2 * n, e, Activation::None)?;
    let mut dt_proj = linear(rng, e, r, Activation::Softplus)?;
    // dt = softplus(bias) log-uniform in [1e-3, 1e-1]
    let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
    let bias: Vec<f32> = (0..e).map(|_| inv_softplus(rng.random_range(lo..hi).exp()) as f32).collect();
    if let super::weights::SiteKind::Float { bias: b, .. } = &mut dt_proj.kind {
        *b = bias;
    }
    let a = (0..e).flat_map(|_| (0..n).map(|s| -((s + 1) as f32))).collect();
    Ok(DirWeights { conv, x_proj, dt_proj, a, d_skip: vec![1.0; e] })
}

/// A float model with i.i.d. Gaussian weights drawn from a seeded ChaCha8 stream.
pub fn init_model(cfg: &VimConfig, seed: u64) -> Result<VimModel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, e) = (cfg.d_model, cfg.inner());
    let patch_in = cfg.in_channels * cfg.patch * cfg.patch;
    let patch_embed = linear(&mut rng, d, patch_in, Activation::None)?;
    let cls = gaussian(&mut rng, d, 0.02);
    let mut blocks = Vec::with_capacity(cfg.n_blocks);
    for _ in 0..cfg.n_blocks {
        let in_proj = linear(&mut rng, 2 * e, d, Activation::None)?;
        let fwd = direction(&mut rng, cfg)?;
        let bwd = direction(&mut rng, cfg)?;
        let out_proj = linear(&mut rng, d, e, Activation::None)?;
        blocks.push(BlockWeights { norm_gamma: vec![1.0; d], norm_beta: vec![0.0; d], in_proj, fwd, bwd, out_proj });
    }
    let head = linear(&mut rng, cfg.classes, d, Activation::None)?;
    let m = VimModel {
        cfg: cfg.clone(),
        quant: None,
        patch_embed,
        cls,
        blocks,
        norm_gamma: vec![1.0; d],
        norm_beta: vec![0.0; d],
        head,
    };
    m.validate()?;
    Ok(m)
}

/// A `[C, H, W]` image of standard-normal pixels.
pub fn random_image(cfg: &VimConfig, height: usize, width: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian(&mut rng, cfg.in_channels * height * width, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear::activation::softplus;

    #[test]
    fn inverse_softplus() {
        for y in [1e-3, 1e-2, 0.1] {
            assert!((softplus(inv_softplus(y) as f32) as f64 - y).abs() < 1e-6 * y.max(1e-3) * 10.0);
        }
    }

    #[test]
    fn seeded() {
        let mut cfg = VimConfig::new(super::super::Variant::Tiny);
        cfg.n_blocks = 1;
        cfg.classes = 10;
        let a = init_model(&cfg, 3).unwrap();
        let b = init_model(&cfg, 3).unwrap();
        assert_eq!(a.cls, b.cls);
        assert_eq!(a.blocks[0].fwd.a[..3], [-1.0, -2.0, -3.0]);
    }
}
