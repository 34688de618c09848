//! Lockout: path-seeking training of sparsity-constrained differentiable models.
//!
//! The crate trains dense feed-forward networks (and linear models, as the
//! single-layer special case) under a budget `P(w) <= t` on a penalty of the
//! parameter magnitudes, and follows the family of constrained solutions as
//! `t` shrinks towards zero. At every iteration the loss and the penalty are
//! linearized around the current parameters and the resulting linear program
//! is solved in closed form: parameters compete for budget by their
//! gradient-to-slope ratio, and any parameter whose update would cross zero
//! is locked at exactly zero until the planner selects it again.
//!
//! Module map:
//!
//! - [`net`]: dense network evaluation, reverse-mode gradients, metrics.
//! - [`optim`]: gradient descent / adaptive moments and the unconstrained
//!   training loops that produce the path starting points.
//! - [`constraint`]: penalty values and slopes over a parameter selection.
//! - [`lockout`]: the per-step planner and the path driver.
//! - [`oracle`]: independent reference solvers used for verification.
//! - [`data`]: synthetic generators, CSV ingestion, splits.
//! - [`pathlog`]: path records, model selection, feature importance, export.
//! - [`verify`]: randomized oracle suites shared by tests and the CLI.

pub mod constraint;
pub mod data;
pub mod error;
pub mod lockout;
pub mod net;
pub mod optim;
pub mod oracle;
pub mod pathlog;
pub mod verify;

pub use error::{Error, Result};

/// Sign with `sign(0) = 0`.
#[inline]
pub(crate) fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
