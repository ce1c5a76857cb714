//! Robust multi-sensor state estimation under `(p, m)`-sparse integrity attacks.
//!
//! An estimate is the minimizer of a sum of per-sensor convex costs applied to
//! the sensor residuals. Whether that estimator stays bounded under any attack
//! on `p` of the `m` sensors is decided by comparing the asymptotic gains of
//! the costs: the attacked sensors' combined gain must be strictly smaller
//! than the honest sensors' along every direction.
//!
//! Modules:
//! - [`model`]: measurement model, sparse attacks, scenarios and files.
//! - [`costs`]: per-sensor cost functions and their asymptotic gains.
//! - [`solver`]: closed-form, Weiszfeld and first-order estimators.
//! - [`certifier`]: sphere search for the gain margin, robustness verdicts.
//! - [`attacks`]: diverging witness attacks and baseline attacks.
//! - [`harness`]: trials, bias curves and breakdown sweeps.
//! - [`cli`]: the `robust-est` command line.

pub mod attacks;
pub mod certifier;
pub mod cli;
pub mod costs;
mod error;
pub mod harness;
pub mod model;
pub mod selftest;
pub mod solver;

pub use error::{Error, Result};
