//! Gradient descent on log-sum-exp objectives as implicit
//! expectation-maximization.
//!
//! * [`numeric`]: vectors, seeded randomness, stable log-sum-exp, a
//!   central-difference oracle.
//! * [`distance`]: models producing per-component distances and their chain rule.
//! * [`objectives`]: LSE, NLL, cross-entropy and correntropy objectives.
//! * [`regimes`]: classical EM plus the unsupervised, conditional (attention)
//!   and constrained (cross-entropy) trainers.
//! * [`diagnostics`]: responsibilities from gradients, specialization,
//!   collapse and two-timescale drift analysis.
//! * [`synthetic`]: seeded cluster and key-routing datasets.
//! * [`harness`]: configuration, file formats and the CLI commands.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod distance;
pub mod harness;
pub mod error;
pub mod numeric;
pub mod objectives;
pub mod regimes;
pub mod synthetic;

pub use error::{Error, Result};
