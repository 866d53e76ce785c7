//! Sparse association graphs for data whose columns follow arbitrary marginal
//! losses, learned by repeatedly solving penalized Gaussian graph problems.
//!
//! The crate is organised by stage:
//!
//! - [`losses`]: per-column losses with gradient Lipschitz constants.
//! - [`glasso`]: the penalized Gaussian precision solver.
//! - [`iggl`]: the outer iteration that linearizes the losses.
//! - [`select`]: lambda paths, BIC and recovery metrics.
//! - [`datagen`]: synthetic graphs, samplers and brute-force oracles.
//! - [`cli`]: the file-based batch interface behind the `iggl` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datagen;
pub mod error;
pub mod glasso;
pub mod iggl;
pub mod linalg;
pub mod losses;
pub mod select;

pub use error::{Error, Result};
pub use glasso::{solve_ggl, GglInstance, PrecisionEstimate};
pub use iggl::{FitOptions, FitProblem, FitResult, MeanModel};
pub use losses::{ColumnLoss, LossColumnMap, LossKind, LossSpec};
pub use select::{bregman, bregman_sym, edge_metrics, fit_path, lambda_grid, PathMode, PathResult};
