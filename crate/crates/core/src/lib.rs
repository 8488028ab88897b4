//! Numerical laboratory for the continuous-time theory of SGD with momentum.
//!
//! The crate covers the hyperparameter algebra linking `(s, alpha)` to the
//! friction/temperature pair `(mu, beta)`, a catalog of Morse test objectives,
//! separating-saddle detection, closed-form escape-rate predictions, discrete
//! optimizers and SDE integrators, phase-space discretizations of the Kramers
//! operator, and a constructive hypocoercivity certificate.

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod hyperparams;
pub mod hypocoercivity;
pub mod morse;
pub mod potentials;
pub mod rates;
pub mod simulate;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
pub use hyperparams::Hyperparams;
pub use potentials::Potential;
