//! Quantization: APoT codebooks and per-block weight quantization, dynamic
//! per-token int8 activation quantization, and per-channel smoothing.

pub mod activation;
pub mod codebook;
pub mod smoothing;
pub mod weights;

pub use activation::{quantize_rows, quantize_token, ActQuant, ActQuantKind, ActScales, QuantizedRows, TokenQuant};
pub use codebook::{build_codebook, ApotCodebook};
pub use smoothing::{compute_smoothing, fuse_into_affine, fuse_smoothing, SmoothingScales};
pub use weights::{dequantize_weights, quantize_weights, QuantizedWeights};
