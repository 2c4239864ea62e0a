//! Compressed sensing with piecewise-linear generative priors.
//!
//! Signals are recovered from `y = A x* + η` by descending the latent space
//! of a generator `G`, minimizing `‖A G(z) − y‖² + λ‖z‖²`. The crate also
//! ships Lasso baselines and empirical checks of the restricted-eigenvalue,
//! Lipschitz and region-counting properties that make that recovery work.

// `!(x > 0.0)` is the idiom for rejecting NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod harness;
pub mod measurement;
pub mod model;
pub mod recovery;
pub mod srec;
pub mod tensor;

pub use error::{Error, Result};
