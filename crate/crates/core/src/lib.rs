//! Genetic-algorithm based parameter estimation with a decomposition of
//! estimate variability into a sampling part and an algorithmic part, an
//! empirical convergence-rate fit, and an optimal sample-size / evaluation
//! budget solver under a linear cost constraint.
//!
//! The crate is organised bottom-up:
//!
//! * [`coding`] and [`ga`]: binary coding and the elitist GA engine.
//! * [`problems`]: the LAD regression, AR subset-selection and g-and-k
//!   likelihood problems, with data generators and reference estimators.
//! * [`variance`]: Monte Carlo estimates of the sampling and GA variance.
//! * [`rate`]: fitting `w * V^-a` to GA variance curves.
//! * [`tradeoff`]: the constrained total-variability minimisation.

pub mod coding;
pub mod error;
pub mod ga;
pub mod numeric;
pub mod problems;
pub mod rate;
pub mod seed;
pub mod tradeoff;
pub mod variance;

pub use error::{Error, Result};
