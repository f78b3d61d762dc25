//! Unified linear engine.
//!
//! Data flows through five stages, each modelled bit-exactly:
//!
//! 1. dynamic quantizer: per-token int8 activations and scales
//! 2. LUT precompute: for every activation element, the shifted products
//!    `x * level * 2^F` of all codebook levels, built once per input tile
//! 3. tile walker: weight codes are streamed from the packed blob in tile order
//! 4. PE lanes: a magnitude-indexed mux plus conditional negation select LUT
//!    entries; an integer adder tree reduces each weight block
//! 5. post-processing: block scales, activation scale and `2^-F` rescale
//!    the row, then bias and the (LUT-approximated) activation function

pub mod act_lut;
pub mod activation;
pub mod engine;
pub mod lut;
pub mod pe;
pub mod reference;
pub mod walker;

pub use act_lut::ActOffsetLut;
pub use activation::Activation;
pub use engine::{linear_forward_quantized, LinearEngine, QuantizedLinear, TileConfig};
pub use lut::{precompute_lut, shift_add, LutBank};
pub use pe::{pe_lane_accumulate, scale_and_reduce, PeControlPacket, RowAccumulator};
pub use reference::linear_forward_reference;
pub use walker::{TileCoord, TileWalker};
