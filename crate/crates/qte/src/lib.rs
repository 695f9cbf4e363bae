//! Bayesian semiparametric estimation of counterfactual outcome
//! distributions and quantile treatment effects (QTEs).
//!
//! The estimator models the conditional distribution of a normalized
//! outcome given treatment and a balancing score as a mixture of
//! second-order M-spline densities whose weights are produced by a
//! feed-forward network with a softmax head. Network weights carry
//! Gaussian scale-mixture priors and are sampled with a no-U-turn
//! sampler interleaved with conjugate Gibbs updates of the precision
//! hyperparameters. Counterfactual marginals are obtained by averaging
//! the fitted conditional distributions over the covariate distribution
//! with Bayesian-bootstrap weights, and quantile treatment effects are
//! differences of inverted marginal CDFs.
//!
//! Entry points:
//!
//! * [`simulate::Design::generate`] draws data from the built-in
//!   benchmark designs.
//! * [`propensity::fit_propensity`] produces posterior propensity draws.
//! * [`counterfactual::estimate`] runs the full posterior pipeline.
//! * [`counterfactual::summarize`] turns draws into point estimates and
//!   equal-tailed credible intervals on the original outcome scale.
//!
//! The `guide` module holds the user guide; its chapters double as
//! compiled examples.

pub mod counterfactual;
pub mod data;
mod error;
pub mod guide;
pub mod metrics;
pub mod network;
pub(crate) mod numeric;
pub mod propensity;
pub mod rng;
pub mod sampler;
pub mod simulate;
pub mod spline;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

/// Library version, for embedding in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
