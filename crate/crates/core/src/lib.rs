//! Hierarchical predictive coding networks with learnable per-unit precision.
//!
//! - [`pc_core`]: network state, prediction errors, free energy and gradients
//! - [`precision`]: variance estimation and precision-weighted errors
//! - [`train`]: activity relaxation and SGD / Adadelta weight updates
//! - [`fisher`]: closed-form and Monte-Carlo Fisher information
//! - [`data`]: MNIST IDX loading, noise, dropout and seeded streams
//! - [`experiments`]: scripted runs that emit traces and summaries
//! - [`cli`]: configuration and the `pcn` command line

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod fisher;
pub mod pc_core;
pub mod precision;
pub mod trace;
pub mod train;

pub use error::{PcnError, Result};
pub use pc_core::{Activation, LayerState, Neighborhood, PcNetwork, Weighting, SIGMA_FLOOR};
pub use precision::VarianceMode;
pub use trace::{Quantity, TraceRecord};
pub use train::{AdadeltaState, Preconditioner, Schedule, WeightStepper};
