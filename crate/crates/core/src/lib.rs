//! Bit-accurate W4A8 quantization for Vision Mamba encoders and a functional
//! simulator of the accelerator datapaths that execute it.
//!
//! # Modules
//!
//! - [`tensor`] -- tensor container, `.vimq` file format, packed weight blobs
//! - [`quant`] -- APoT codebooks, per-block weight quantization, dynamic
//!   per-token activation quantization, smoothing
//! - [`linear`] -- LUT-based linear engine (tiling walker, shift LUTs, PE lanes)
//! - [`ssm`] -- three-stage selective SSM engine and the associative-scan oracle
//! - [`aux`] -- patch embedding, causal conv, normalization, token plumbing
//! - [`model`] -- encoder assembly, quantization pipeline, calibration, model I/O
//! - [`perf`] / [`report`] -- engine counters and accuracy reports
//! - [`oracle`] -- independent reference implementations used by tests and selftest

pub mod aux;
pub mod error;
pub mod linear;
pub mod mat;
pub mod model;
pub mod oracle;
pub mod perf;
pub mod quant;
pub mod report;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use mat::Mat;
