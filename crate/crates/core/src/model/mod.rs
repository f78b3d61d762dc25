//! Vision Mamba encoder assembled from the engines.
//!
//! Per block: norm, in-projection into `x`/`z` branches, then for each scan
//! direction a causal conv with SiLU, the `x` projection to `(dt, B, C)`, the
//! dt projection with SoftPlus and the SSM gated by `SiLU(z)`; the backward
//! direction runs on the flipped sequence and is flipped back before the two
//! are summed. The sum is out-projected and added to the residual stream.
//!
//! The same graph runs with float sites (reference path) or quantized sites.

pub mod calibrate;
pub mod config;
pub mod forward;
pub mod init;
pub mod io;
pub mod quantize;
pub mod weights;

pub use calibrate::{calibrate, CalibStats};
pub use config::{ClsPosition, QuantConfig, Variant, VimConfig};
pub use forward::{ForwardOptions, NoObserver, Observer, Recorder};
pub use init::{init_model, random_image};
pub use io::{blobs_to_container, load_blobs, load_model, model_from_container, model_to_container, save_blobs, save_model};
pub use quantize::{quantize_model, smooth_model, QuantSummary};
pub use weights::{BlockWeights, ConvSite, DirWeights, LinearSite, SiteKind, VimModel};
