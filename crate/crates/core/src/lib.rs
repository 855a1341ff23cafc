//! SGD with unbiased and consistent gradient estimators on synthetic
//! graph-convolution problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`datagen`]: seeded Erdős–Rényi graphs, Gaussian-mixture features and
//!   planted ground truths.
//! - [`problems`]: the linear (strongly convex) and one-hidden-layer sigmoid
//!   (nonconvex) least-squares objectives with analytic gradients.
//! - [`estimators`]: exact, unbiased minibatch and layer-sampled consistent
//!   gradient estimators, plus Monte Carlo diagnostics.
//! - [`optimizer`]: projected SGD, step-size rules and run traces.
//! - [`bounds`]: closed-form right-hand sides of the convergence guarantees.
//! - [`harness`]: experiment configuration, rate fitting, plotting and the
//!   verification suite behind the `consgrad` CLI.

pub mod bounds;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod optimizer;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};

/// Flattened parameter vector. For the nonconvex problem this is the
/// column-major vectorisation of `W1` followed by `W2`.
pub type ParamVector = nalgebra::DVector<f64>;

/// Format a float with 17 significant digits, the precision used by every
/// CSV the crate writes.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
