//! Patch embedding front end.
//!
//! A stride-`P` convolution is a linear layer over flattened patches, so the
//! model feeds [`im2col`] output straight into the linear engine.

use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchEmbedConfig {
    pub patch: usize,
    pub in_channels: usize,
    pub embed_dim: usize,
}

impl PatchEmbedConfig {
    /// Width of one flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch * self.patch
    }
}

pub fn patch_count(cfg: &PatchEmbedConfig, height: usize, width: usize) -> Result<usize> {
    if cfg.patch == 0 || height % cfg.patch != 0 || width % cfg.patch != 0 || height == 0 || width == 0 {
        return Err(Error::Shape(format!("image {height}x{width} not divisible into {0}x{0} patches", cfg.patch)));
    }
    Ok((height / cfg.patch) * (width / cfg.patch))
}

/// `[C, H, W]` image to `[patches, C*P*P]`, patches in raster order and each
/// patch flattened channel, row, column.
pub fn im2col(image: &[f32], cfg: &PatchEmbedConfig, height: usize, width: usize) -> Result<Mat> {
    let n = patch_count(cfg, height, width)?;
    let (c, p) = (cfg.in_channels, cfg.patch);
    if image.len() != c * height * width {
        return Err(Error::Shape(format!("image buffer has {} values, expected {c}x{height}x{width}", image.len())));
    }
    let per_row = width / p;
    let mut out = Mat::zeros(n, cfg.patch_dim());
    for k in 0..n {
        let (py, px) = (k / per_row, k % per_row);
        let dst = out.row_mut(k);
        for ch in 0..c {
            for dy in 0..p {
                let src = ch * height * width + (py * p + dy) * width + px * p;
                let off = (ch * p + dy) * p;
                dst[off..off + p].copy_from_slice(&image[src..src + p]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: usize) -> PatchEmbedConfig {
        PatchEmbedConfig { patch: p, in_channels: 3, embed_dim: 8 }
    }

    #[test]
    fn counts() {
        assert_eq!(patch_count(&cfg(16), 16, 16).unwrap(), 1);
        assert_eq!(patch_count(&cfg(16), 224, 224).unwrap(), 196);
        assert_eq!(patch_count(&cfg(16), 96, 96).unwrap(), 36);
        assert!(patch_count(&cfg(16), 100, 96).is_err());
    }

    #[test]
    fn layout() {
        let c = PatchEmbedConfig { patch: 2, in_channels: 1, embed_dim: 1 };
        let img: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let m = im2col(&img, &c, 4, 4).unwrap();
        assert_eq!(m.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(m.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(m.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }
}
