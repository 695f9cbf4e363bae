//! Dual-averaging step size adaptation targeting a fixed acceptance
//! statistic (Hoffman-Gelman constants: gamma 0.05, t0 10, kappa 0.75).

use super::{STEP_SIZE_MAX, STEP_SIZE_MIN};

#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    m: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            m: 0.0,
        }
    }

    /// Feeds one acceptance statistic; returns the step size for the
    /// next iteration.
    pub fn update(&mut self, accept: f64) -> f64 {
        let accept = if accept.is_finite() { accept.clamp(0.0, 1.0) } else { 0.0 };
        self.m += 1.0;
        self.h_bar += (self.target - accept - self.h_bar) / (self.m + T0);
        self.log_eps = self.mu - self.m.sqrt() / GAMMA * self.h_bar;
        self.log_eps = self
            .log_eps
            .clamp(STEP_SIZE_MIN.ln(), STEP_SIZE_MAX.ln());
        let w = self.m.powf(-KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
        // exp(ln(bound)) can round just past the bound.
        self.log_eps.exp().clamp(STEP_SIZE_MIN, STEP_SIZE_MAX)
    }

    /// Smoothed step size to freeze after warmup.
    pub fn finalized(&self) -> f64 {
        if self.m == 0.0 {
            return self.log_eps.exp();
        }
        self.log_eps_bar.exp().clamp(STEP_SIZE_MIN, STEP_SIZE_MAX)
    }
}
