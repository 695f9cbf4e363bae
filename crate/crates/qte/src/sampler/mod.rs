//! Posterior sampling for networks with scale-mixture priors.
//!
//! Each iteration runs one NUTS transition on the flat weight vector
//! conditional on the current precisions, then one conjugate Gibbs
//! sweep over the precisions conditional on the new weights. Step
//! sizes are adapted by dual averaging during burn-in and frozen
//! afterwards.

mod dual_average;
mod gibbs;
mod nuts;

pub use dual_average::DualAveraging;
pub use gibbs::{kappa_conditional, omega_conditional, GammaParams};
pub use nuts::{find_initial_step_size, nuts_draw, DrawStats, DIVERGENCE_THRESHOLD};

use crate::network::{
    gsm_log_prior_grad, gsm_log_prior_unchecked, GsmHyperParams, NetworkLikelihood,
    NetworkWeights, PrecisionState, Workspace,
};
use crate::rng::stream_rng;
use crate::{Error, Result};

/// Smallest and largest admissible leapfrog step sizes.
pub const STEP_SIZE_MIN: f64 = 1e-8;
pub const STEP_SIZE_MAX: f64 = 1e3;

/// Chain length and adaptation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Total iterations including burn-in.
    pub n_iter: usize,
    /// Iterations discarded from the front; adaptation happens here.
    pub n_burnin: usize,
    /// Keep every `thin`-th post-burn-in iteration.
    pub thin: usize,
    /// Acceptance statistic targeted by step size adaptation.
    pub target_accept: f64,
    /// Cap on trajectory doublings per draw.
    pub max_tree_depth: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_iter: 3000,
            n_burnin: 1000,
            thin: 10,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter <= self.n_burnin {
            return Err(Error::InvalidArgument(format!(
                "n_iter ({}) must exceed n_burnin ({})",
                self.n_iter, self.n_burnin
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if self.num_draws() == 0 {
            return Err(Error::InvalidArgument(format!(
                "no draws retained: ({} - {}) / {} rounds to zero",
                self.n_iter, self.n_burnin, self.thin
            )));
        }
        if !(0.0..1.0).contains(&self.target_accept) || self.target_accept <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.max_tree_depth == 0 || self.max_tree_depth > 20 {
            return Err(Error::InvalidArgument(format!(
                "max_tree_depth must lie in 1..=20, got {}",
                self.max_tree_depth
            )));
        }
        Ok(())
    }

    /// Number of retained draws.
    pub fn num_draws(&self) -> usize {
        (self.n_iter - self.n_burnin) / self.thin
    }
}

/// Diagnostics of one retained draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawDiagnostics {
    pub stats: DrawStats,
    pub step_size: f64,
}

/// Retained posterior draws of one chain.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub weights: Vec<NetworkWeights>,
    pub precisions: Vec<PrecisionState>,
    pub diagnostics: Vec<DrawDiagnostics>,
    /// Divergent iterations after burn-in, over all iterations, not
    /// only retained ones.
    pub post_burnin_divergences: usize,
    pub post_burnin_iterations: usize,
    /// Step size in force after adaptation.
    pub step_size: f64,
}

impl ChainDraws {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Fraction of post-burn-in iterations flagged divergent.
    pub fn divergence_rate(&self) -> f64 {
        if self.post_burnin_iterations == 0 {
            return 0.0;
        }
        self.post_burnin_divergences as f64 / self.post_burnin_iterations as f64
    }
}

/// Runs one chain on stream 0 of `config.seed`.
pub fn run_chain<M: NetworkLikelihood>(
    model: &M,
    hyper: &GsmHyperParams,
    config: &SamplerConfig,
) -> Result<ChainDraws> {
    run_chain_on_stream(model, hyper, config, 0)
}

/// Runs one chain on an explicit RNG stream, so concurrent chains can
/// share a seed without sharing randomness.
pub fn run_chain_on_stream<M: NetworkLikelihood>(
    model: &M,
    hyper: &GsmHyperParams,
    config: &SamplerConfig,
    stream: u64,
) -> Result<ChainDraws> {
    config.validate()?;
    hyper.validate()?;
    let mut rng = stream_rng(config.seed, stream);
    let arch = model.arch().clone();
    let mut ws = Workspace::new(&arch);
    let mut scratch = NetworkWeights::zeros(&arch);
    let mut precisions = PrecisionState::ones(&arch);

    // Initial state: small Gaussian weights with finite posterior.
    const INIT_ATTEMPTS: usize = 100;
    let mut position = None;
    for _ in 0..INIT_ATTEMPTS {
        let cand = NetworkWeights::sample_gaussian(&arch, 0.1, &mut rng);
        let lp = model.log_lik_grad(&cand, None, &mut ws)
            + gsm_log_prior_unchecked(&cand, &precisions);
        if lp.is_finite() {
            position = Some(cand.as_flat().to_vec());
            break;
        }
    }
    let mut position = position.ok_or(Error::ChainInit {
        attempts: INIT_ATTEMPTS,
    })?;

    let mut step_size = {
        let mut f = logp_grad_closure(model, &mut scratch, &mut ws, &precisions);
        find_initial_step_size(&position, &mut f, &mut rng)?
    };
    let mut adapter = dual_average::DualAveraging::new(step_size, config.target_accept);

    let n_draws = config.num_draws();
    let mut out = ChainDraws {
        weights: Vec::with_capacity(n_draws),
        precisions: Vec::with_capacity(n_draws),
        diagnostics: Vec::with_capacity(n_draws),
        post_burnin_divergences: 0,
        post_burnin_iterations: 0,
        step_size,
    };

    for it in 0..config.n_iter {
        let stats = {
            let mut f = logp_grad_closure(model, &mut scratch, &mut ws, &precisions);
            let (next, stats) =
                nuts_draw(&position, &mut f, step_size, config.max_tree_depth, &mut rng)?;
            position = next;
            stats
        };

        if it < config.n_burnin {
            step_size = adapter.update(stats.accept_stat);
            if it + 1 == config.n_burnin {
                step_size = adapter.finalized();
                out.step_size = step_size;
            }
        } else {
            out.post_burnin_iterations += 1;
            if stats.divergent {
                out.post_burnin_divergences += 1;
            }
        }

        scratch.flat_mut().copy_from_slice(&position);
        gibbs::gibbs_sweep(&scratch, &mut precisions, hyper, &mut rng);

        if it >= config.n_burnin && (it - config.n_burnin + 1) % config.thin == 0 {
            out.weights.push(scratch.clone());
            out.precisions.push(precisions.clone());
            out.diagnostics.push(DrawDiagnostics { stats, step_size });
        }
    }
    debug_assert_eq!(out.weights.len(), n_draws);
    Ok(out)
}

/// Log posterior density of the flat weight vector given fixed
/// precisions, writing its gradient into the output buffer.
fn logp_grad_closure<'a, M: NetworkLikelihood>(
    model: &'a M,
    scratch: &'a mut NetworkWeights,
    ws: &'a mut Workspace,
    precisions: &'a PrecisionState,
) -> impl FnMut(&[f64], &mut [f64]) -> f64 + 'a {
    move |x: &[f64], grad: &mut [f64]| {
        grad.fill(0.0);
        if x.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        scratch.flat_mut().copy_from_slice(x);
        let ll = model.log_lik_grad(scratch, Some(grad), ws);
        gsm_log_prior_grad(scratch, precisions, grad);
        ll + gsm_log_prior_unchecked(scratch, precisions)
    }
}
