//! Auxiliary engines: everything in the encoder that is not a linear layer
//! or the SSM itself.

pub mod conv;
pub mod norm;
pub mod patch;
pub mod tokens;

pub use conv::{causal_conv, causal_conv_quantized, conv_filter, conv_window, CausalConvConfig, QuantizedConv};
pub use norm::{normalize, NormKind};
pub use patch::{im2col, patch_count, PatchEmbedConfig};
pub use tokens::{extract_cls, flip_sequence, insert_cls, residual_add};
