//! Adaptive generalized robust kernel for non-linear least squares.
//!
//! The crate evaluates the generalized (Barron) robust loss family, normalizes
//! it into a truncated probability density through a precomputed partition
//! table, estimates the kernel shape `alpha` from a residual set by grid
//! search, and couples that estimate with an IRLS / Levenberg-Marquardt solver
//! in an expectation-maximization loop. Demonstration problems (line fitting,
//! rigid registration, bundle adjustment) live in [`problems`].
//!
//! The crate is `no_std` with `alloc`. All transcendental math goes through
//! `libm`, so results are identical with and without the `std` feature.

#![cfg_attr(not(feature = "std"), no_std)]
#![warn(missing_debug_implementations, rust_2018_idioms)]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub(crate) mod math;

pub mod adaptive;
pub mod kernel;
pub mod partition;
pub mod problems;
pub mod solver;

pub use adaptive::{estimate_alpha, log_likelihood, AlphaEstimate, EStepOptions, ResidualSet};
pub use error::{Error, Result};
pub use kernel::{
    named_rho, named_rho_prime, named_weight, rho, rho_prime, weight, KernelFamily, KernelParams,
    NamedKernel, RobustLoss,
};
pub use partition::{compute_log_partition, log_density, truncated_loss, PartitionTable};
pub use solver::{
    check_jacobian, em_solve, irls_solve, solve, AlphaPolicy, BlockJacobian, EmRecord, FixedKernel,
    Problem, SolveReport, SolverConfig, TerminationReason,
};
