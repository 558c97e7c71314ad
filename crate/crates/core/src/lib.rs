//! Decomposition of a total treatment effect through a chain of monotone
//! binary mediators.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: the sequential observed-data layout and its validation.
//! - [`learners`]: nuisance regressions (OLS, logistic, lasso, forests, stacking).
//! - [`decomposition`]: the component algebra shared by every estimator.
//! - [`oracle`]: exact g-formula values for discrete laws.
//! - [`eif`]: the cross-fitted influence-function estimator.
//! - [`rwr`]: the regression-with-residuals estimator with bootstrap inference.
//! - [`sensitivity`]: bias formulas for an unobserved binary confounder.
//! - [`simulation`]: data-generating processes and the Monte Carlo harness.

pub mod data;
pub mod decomposition;
pub mod eif;
pub mod error;
pub mod estimate;
pub mod learners;
pub mod oracle;
pub mod rwr;
pub mod sensitivity;
pub mod simulation;
pub mod stats;

pub use data::{ColumnSchema, SequentialDataset};
pub use decomposition::{ComponentSet, PathEffects};
pub use error::{Error, Result};
pub use estimate::{DecompositionEstimate, Method};
pub use learners::{LearnerSpec, Link};
