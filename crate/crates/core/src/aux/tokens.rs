//! Token-sequence plumbing.

use crate::error::{Error, Result};
use crate::mat::Mat;

pub fn insert_cls(tokens: &Mat, cls: &[f32], position: usize) -> Result<Mat> {
    if position > tokens.rows {
        return Err(Error::Config(format!("CLS position {position} beyond {} tokens", tokens.rows)));
    }
    if cls.len() != tokens.cols && tokens.rows > 0 {
        return Err(Error::Shape(format!("CLS width {} vs token width {}", cls.len(), tokens.cols)));
    }
    let cols = cls.len();
    let mut data = Vec::with_capacity((tokens.rows + 1) * cols);
    data.extend_from_slice(&tokens.data[..position * cols]);
    data.extend_from_slice(cls);
    data.extend_from_slice(&tokens.data[position * cols..]);
    Mat::new(tokens.rows + 1, cols, data)
}

/// Inverse of [`insert_cls`]: `(cls, remaining tokens)`.
pub fn extract_cls(tokens: &Mat, position: usize) -> Result<(Vec<f32>, Mat)> {
    if position >= tokens.rows {
        return Err(Error::Config(format!("CLS position {position} beyond {} tokens", tokens.rows)));
    }
    let c = tokens.cols;
    let cls = tokens.row(position).to_vec();
    let mut data = tokens.data[..position * c].to_vec();
    data.extend_from_slice(&tokens.data[(position + 1) * c..]);
    Ok((cls, Mat::new(tokens.rows - 1, c, data)?))
}

pub fn flip_sequence(tokens: &Mat) -> Mat {
    let mut out = Mat::zeros(tokens.rows, tokens.cols);
    for r in 0..tokens.rows {
        out.row_mut(r).copy_from_slice(tokens.row(tokens.rows - 1 - r));
    }
    out
}

pub fn residual_add(a: &Mat, b: &Mat) -> Result<Mat> {
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(Error::Shape(format!("residual {}x{} + {}x{}", a.rows, a.cols, b.rows, b.cols)));
    }
    Mat::new(a.rows, a.cols, a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect())
}
