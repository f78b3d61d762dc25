//! Selective SSM engine.
//!
//! Three stages per token, sequential in `t` and parallel over channels:
//!
//! 1. discretization and recurrence: `Abar = exp(delta * A)`,
//!    `Bbar_u = (delta * u) * B_t`, `h_t = h_{t-1} * Abar + Bbar_u`
//! 2. state projection: `y_t = h_t . C_t` through a pairwise adder tree whose
//!    leaves are grouped into `N_B`-lane state tiles
//! 3. fused output: `(y_t + u_t * D) * z_t`
//!
//! Everything is generic over the float type so the same code runs in f32
//! (the deployed precision) and f64 (for tight oracle comparisons).

pub mod engine;
pub mod exp;
pub mod scan;
pub mod stages;

pub use engine::{SsmEngine, SsmParams, SsmToken};
pub use exp::{ExpMode, ExpTable};
pub use scan::ssm_scan_oracle;
pub use stages::{discretize, fused_output, state_project, state_update};

/// Float types the SSM engine runs in.
pub trait SsmFloat: num_traits::Float + Send + Sync + std::fmt::Debug + serde::Serialize + 'static {}

impl<T: num_traits::Float + Send + Sync + std::fmt::Debug + serde::Serialize + 'static> SsmFloat for T {}
