//! Sparse-input neural networks for finding needles in nonlinear haystacks.
//!
//! The first-layer weights and all hidden biases carry an `l1` penalty while the
//! deeper layers are row-normalized and unpenalized. A single penalty level is
//! chosen as an upper quantile of the zero-thresholding statistic under the
//! constant-association null, so no validation set is needed.
//!
//! Module map:
//!
//! - [`activation`]: the rescaled softplus dictionary and its derivatives.
//! - [`network`]: shapes, parameters, forward and backward passes.
//! - [`objective`]: losses, the `l1` penalty, the proximal map, null Hessians.
//! - [`qut`]: closed-form zero-thresholding values, a numeric supremum oracle and
//!   the Monte-Carlo quantile universal threshold.
//! - [`solver`]: annealed warm-start descent followed by proximal refinement.
//! - [`eval`]: simulation generators, support-recovery metrics and sweeps.
//! - [`cli`]: CSV ingestion, JSON configuration and the command implementations.

pub mod activation;
pub mod cli;
pub mod error;
pub mod eval;
pub mod network;
pub mod objective;
pub mod qut;
pub mod rng;
pub mod solver;

pub use activation::ActivationSpec;
pub use error::{Error, Result};
pub use network::{Dataset, Link, NetworkShape, Task, Theta};
pub use objective::{LossKind, PenaltySpec};
pub use qut::{QutConfig, QutResult};
pub use solver::{FitResult, SolverConfig};
