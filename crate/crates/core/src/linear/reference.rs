//! Float ground truth for the linear layers.

use rayon::prelude::*;

use super::activation::Activation;
use crate::error::{Error, Result};
use crate::mat::Mat;

/// `act(x @ w^T + bias)` with f32 accumulation in ascending input order.
pub fn linear_forward_reference(x: &Mat, w: &[f32], out_dim: usize, bias: &[f32], act: Activation) -> Result<Mat> {
    let in_dim = x.cols;
    if w.len() != out_dim * in_dim || bias.len() != out_dim {
        return Err(Error::Shape(format!(
            "linear {in_dim}->{out_dim}: weight has {} values, bias {}",
            w.len(),
            bias.len()
        )));
    }
    let mut y = Mat::zeros(x.rows, out_dim);
    if out_dim == 0 {
        return Ok(y);
    }
    y.data.par_chunks_mut(out_dim).enumerate().for_each(|(r, yr)| {
        let xr = x.row(r);
        for (o, out) in yr.iter_mut().enumerate() {
            let wr = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = 0.0f32;
            for (a, b) in xr.iter().zip(wr) {
                acc += a * b;
            }
            *out = act.apply(acc + bias[o]);
        }
    });
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight() {
        let x = Mat::new(2, 3, vec![1.0, -2.0, 3.5, 0.0, 7.0, -1.25]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let y = linear_forward_reference(&x, &eye, 3, &[0.0; 3], Activation::None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_example() {
        let x = Mat::new(1, 2, vec![1.0, 2.0]).unwrap();
        let y = linear_forward_reference(&x, &[1.0, 1.0, 0.0, 1.0], 2, &[0.0, 0.0], Activation::None).unwrap();
        assert_eq!(y.data, vec![3.0, 2.0]);
    }

    #[test]
    fn dim_mismatch() {
        let x = Mat::zeros(1, 2);
        assert!(linear_forward_reference(&x, &[1.0; 3], 2, &[0.0; 2], Activation::None).is_err());
    }
}
