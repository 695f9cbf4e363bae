//! Bundled simulation designs with known ground truth.
//!
//! Four designs stress different parts of the estimator: design 1 has
//! five uniform covariates (a configurable number of them
//! confounding), a skewed control arm and a bimodal treated arm;
//! design 2 has twelve mixed covariates with interaction-driven
//! treatment and score-dependent outcome mixtures; design 3 has four
//! correlated Gaussian covariates, a network treatment rule and a
//! skew-normal control arm; design 4 is a randomized experiment with
//! inert covariates and exponential outcomes. Every design exposes
//! exact conditional outcome laws, so the marginal ground truth is
//! available by Monte Carlo averaging (closed form for design 4).

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::counterfactual::default_taus;
use crate::data::Dataset;
use crate::numeric::{gauss_legendre, linspace, sigmoid};
use crate::rng::stream_rng;
use crate::{Error, Result};

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_TAU * (-0.5 * z * z).exp()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

static OWEN_RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();

/// Owen's T function T(h, a): the probability mass of a bivariate
/// standard normal over the wedge between the x axis and the line
/// y = ax, at offset h. Evaluated by Gauss-Legendre quadrature of the
/// defining integral; the integrand is analytic, so 48 nodes reach
/// machine precision for the |a| <= 3 used here.
fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    if a < 0.0 {
        return -owens_t(h, -a);
    }
    let rule = OWEN_RULE.get_or_init(|| gauss_legendre(48));
    let half = 0.5 * a;
    let hh = h * h;
    let sum: f64 = rule
        .iter()
        .map(|&(x, w)| {
            let t = half + half * x;
            w * (-0.5 * hh * (1.0 + t * t)).exp() / (1.0 + t * t)
        })
        .sum();
    sum * half / std::f64::consts::TAU
}

/// A conditional outcome law with exact density, distribution
/// function, and sampler. Generation and the ground-truth oracle both
/// run on these objects, so they cannot drift apart.
#[derive(Debug, Clone, Copy)]
enum CondLaw {
    Normal {
        mean: f64,
        sd: f64,
    },
    /// Two-component normal mixture; `w` weights the first component.
    NormalPair {
        w: f64,
        mean: [f64; 2],
        sd: [f64; 2],
    },
    /// Positive/negative half-normal mixture around `shift`: with
    /// probability `w_pos` the residual is |N(0, sd_pos^2)|, else
    /// -|N(0, sd_neg^2)|.
    HalfNormalPair {
        shift: f64,
        w_pos: f64,
        sd_pos: f64,
        sd_neg: f64,
    },
    SkewNormal {
        loc: f64,
        scale: f64,
        shape: f64,
    },
    Exponential {
        rate: f64,
    },
}

impl CondLaw {
    fn pdf(&self, y: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => normal_pdf((y - mean) / sd) / sd,
            Self::NormalPair { w, mean, sd } => {
                w * normal_pdf((y - mean[0]) / sd[0]) / sd[0]
                    + (1.0 - w) * normal_pdf((y - mean[1]) / sd[1]) / sd[1]
            }
            Self::HalfNormalPair {
                shift,
                w_pos,
                sd_pos,
                sd_neg,
            } => {
                let e = y - shift;
                if e >= 0.0 {
                    w_pos * 2.0 * normal_pdf(e / sd_pos) / sd_pos
                } else {
                    (1.0 - w_pos) * 2.0 * normal_pdf(e / sd_neg) / sd_neg
                }
            }
            Self::SkewNormal { loc, scale, shape } => {
                let z = (y - loc) / scale;
                2.0 / scale * normal_pdf(z) * normal_cdf(shape * z)
            }
            Self::Exponential { rate } => {
                if y >= 0.0 {
                    rate * (-rate * y).exp()
                } else {
                    0.0
                }
            }
        }
    }

    fn cdf(&self, y: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => normal_cdf((y - mean) / sd),
            Self::NormalPair { w, mean, sd } => {
                w * normal_cdf((y - mean[0]) / sd[0])
                    + (1.0 - w) * normal_cdf((y - mean[1]) / sd[1])
            }
            Self::HalfNormalPair {
                shift,
                w_pos,
                sd_pos,
                sd_neg,
            } => {
                let e = y - shift;
                if e >= 0.0 {
                    (1.0 - w_pos) + w_pos * (2.0 * normal_cdf(e / sd_pos) - 1.0)
                } else {
                    // P(-|N| <= e) = 2 Phi(e / sd) for e <= 0.
                    (1.0 - w_pos) * 2.0 * normal_cdf(e / sd_neg)
                }
            }
            Self::SkewNormal { loc, scale, shape } => {
                let z = (y - loc) / scale;
                normal_cdf(z) - 2.0 * owens_t(z, shape)
            }
            Self::Exponential { rate } => {
                if y >= 0.0 {
                    -(-rate * y).exp_m1()
                } else {
                    0.0
                }
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Self::NormalPair { w, mean, sd } => {
                let c = usize::from(!rng.random_bool(w));
                mean[c] + sd[c] * rng.sample::<f64, _>(StandardNormal)
            }
            Self::HalfNormalPair {
                shift,
                w_pos,
                sd_pos,
                sd_neg,
            } => {
                let n: f64 = rng.sample(StandardNormal);
                if rng.random_bool(w_pos) {
                    shift + (sd_pos * n).abs()
                } else {
                    shift - (sd_neg * n).abs()
                }
            }
            Self::SkewNormal { loc, scale, shape } => {
                let delta = shape / (1.0 + shape * shape).sqrt();
                let u: f64 = rng.sample(StandardNormal);
                let v: f64 = rng.sample(StandardNormal);
                let z = delta * u.abs() + (1.0 - delta * delta).sqrt() * v;
                loc + scale * z
            }
            Self::Exponential { rate } => rng.sample::<f64, _>(Exp1) / rate,
        }
    }

    /// Interval holding all but a negligible sliver of the mass
    /// (8-plus standard deviations; the 1 - 1e-9 tail for the
    /// exponential).
    fn window(&self) -> (f64, f64) {
        match *self {
            Self::Normal { mean, sd } => (mean - 8.0 * sd, mean + 8.0 * sd),
            Self::NormalPair { mean, sd, .. } => (
                (mean[0] - 8.0 * sd[0]).min(mean[1] - 8.0 * sd[1]),
                (mean[0] + 8.0 * sd[0]).max(mean[1] + 8.0 * sd[1]),
            ),
            Self::HalfNormalPair {
                shift,
                sd_pos,
                sd_neg,
                ..
            } => (shift - 8.0 * sd_neg, shift + 8.5 * sd_pos),
            Self::SkewNormal { loc, scale, .. } => (loc - 8.0 * scale, loc + 8.5 * scale),
            Self::Exponential { rate } => (0.0, 21.0 / rate),
        }
    }
}

/// Constants of design 3: the treatment network, and the covariate
/// covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Design3Params {
    pub w_hidden: [[f64; 4]; 5],
    pub b_hidden: [f64; 5],
    pub w_out: [f64; 5],
    pub b_out: f64,
    pub covariance: [[f64; 4]; 4],
}

pub const DESIGN3_PARAMS: Design3Params = Design3Params {
    w_hidden: [
        [-0.99, -1.1, -0.14, -0.26],
        [-0.18, 0.03, -1.45, -0.07],
        [-0.44, 0.19, 0.86, 0.36],
        [-1.07, 0.67, -0.58, -0.13],
        [0.12, -0.37, 0.47, 1.25],
    ],
    b_hidden: [0.96, 0.64, 0.74, -0.46, 0.21],
    w_out: [-0.15, 0.3, -0.004, -0.21, -0.88],
    b_out: -0.05,
    covariance: [
        [1.0, 0.5, 0.2, 0.3],
        [0.5, 1.0, 0.7, 0.0],
        [0.2, 0.7, 1.0, 0.0],
        [0.3, 0.0, 0.0, 1.0],
    ],
};

impl Design3Params {
    pub fn validate(&self) -> Result<()> {
        for r in 0..4 {
            for c in 0..r {
                if self.covariance[r][c] != self.covariance[c][r] {
                    return Err(Error::InvalidArgument(
                        "covariance is not symmetric".into(),
                    ));
                }
            }
        }
        cholesky4(&self.covariance).map(|_| ())
    }
}

/// Lower Cholesky factor; errors unless the matrix is positive
/// definite.
fn cholesky4(a: &[[f64; 4]; 4]) -> Result<[[f64; 4]; 4]> {
    let mut l = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..=r {
            let s: f64 = (0..c).map(|k| l[r][k] * l[c][k]).sum();
            if r == c {
                let d = a[r][r] - s;
                if d <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "covariance is not positive definite".into(),
                    ));
                }
                l[r][c] = d.sqrt();
            } else {
                l[r][c] = (a[r][c] - s) / l[c][c];
            }
        }
    }
    Ok(l)
}

/// One of the four bundled designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Design {
    /// Five U(-2, 2) covariates, the first `confounders` of which
    /// drive treatment; skewed control arm, bimodal treated arm.
    Sim1 { confounders: usize },
    /// Six continuous plus six binary covariates; treatment and both
    /// outcome mixtures depend on one interaction score.
    Sim2,
    /// Four correlated Gaussian covariates with a fixed-network
    /// treatment rule; skew-normal control arm.
    Sim3,
    /// Five inert covariates, randomized treatment, exponential
    /// outcomes with rates 2 (control) and 4 (treated).
    Sim4,
}

impl Design {
    pub fn from_id(id: u8, confounders: usize) -> Result<Self> {
        let design = match id {
            1 => Self::Sim1 { confounders },
            2 => Self::Sim2,
            3 => Self::Sim3,
            4 => Self::Sim4,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "design id {id} outside 1..=4"
                )))
            }
        };
        design.validate()?;
        Ok(design)
    }

    pub fn id(&self) -> u8 {
        match self {
            Self::Sim1 { .. } => 1,
            Self::Sim2 => 2,
            Self::Sim3 => 3,
            Self::Sim4 => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Sim1 { confounders } = self {
            if *confounders > 5 {
                return Err(Error::InvalidArgument(format!(
                    "design 1 has 5 covariates, cannot confound on {confounders}"
                )));
            }
        }
        Ok(())
    }

    pub fn covariate_dim(&self) -> usize {
        match self {
            Self::Sim1 { .. } | Self::Sim4 => 5,
            Self::Sim2 => 12,
            Self::Sim3 => 4,
        }
    }

    fn draw_covariates<R: Rng>(&self, chol: &[[f64; 4]; 4], rng: &mut R) -> Vec<f64> {
        match self {
            Self::Sim1 { .. } | Self::Sim4 => {
                (0..5).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect()
            }
            Self::Sim2 => {
                let mut x = Vec::with_capacity(12);
                x.extend((0..3).map(|_| rng.random::<f64>()));
                x.extend((0..3).map(|_| 1.0 + rng.random::<f64>()));
                x.extend((0..6).map(|_| f64::from(rng.random_bool(0.5))));
                x
            }
            Self::Sim3 => {
                let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                (0..4)
                    .map(|r| (0..=r).map(|c| chol[r][c] * z[c]).sum())
                    .collect()
            }
        }
    }

    /// True treatment probability given covariates.
    pub fn propensity(&self, x: &[f64]) -> f64 {
        match self {
            Self::Sim1 { confounders } => {
                if *confounders == 0 {
                    0.5
                } else {
                    let s: f64 = x[..*confounders].iter().sum();
                    sigmoid(4.0 / *confounders as f64 * s)
                }
            }
            Self::Sim2 => interaction_score(x),
            Self::Sim3 => {
                let p = &DESIGN3_PARAMS;
                let mut z = p.b_out;
                for l in 0..5 {
                    let h: f64 = (0..4).map(|c| p.w_hidden[l][c] * x[c]).sum();
                    z += p.w_out[l] * (h + p.b_hidden[l]).tanh();
                }
                sigmoid(z)
            }
            Self::Sim4 => 0.5,
        }
    }

    fn laws(&self, x: &[f64]) -> [CondLaw; 2] {
        match self {
            Self::Sim1 { .. } => {
                let z1 = weighted_expit(x, 1);
                let z2 = weighted_expit(x, 2);
                [
                    CondLaw::HalfNormalPair {
                        shift: -2.3 + z1 + z1 * z1,
                        w_pos: 0.75,
                        sd_pos: 0.9,
                        sd_neg: 0.3,
                    },
                    CondLaw::NormalPair {
                        w: 0.7,
                        mean: [-2.5 + 5.0 * z2, 2.5 - 5.0 * z2],
                        sd: [0.35, 0.35],
                    },
                ]
            }
            Self::Sim2 => {
                let z = interaction_score(x);
                // The control weights (sqrt(z), 1 - sqrt(z)) do not
                // sum to one; they are renormalized by their total.
                let total = 1.0 + z.sqrt() - z;
                let sq = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
                [
                    CondLaw::NormalPair {
                        w: z.sqrt() / total,
                        mean: [2.0 * z * z + x[3] + x[2], z * z + x[1] - sq],
                        sd: [0.5, 0.8],
                    },
                    CondLaw::NormalPair {
                        w: 0.6,
                        mean: [-z, x[4] + z],
                        sd: [0.8, 1.0],
                    },
                ]
            }
            Self::Sim3 => [
                CondLaw::SkewNormal {
                    loc: 2.0 * (x[1] - x[2] + 0.5 * x[3]).tanh(),
                    scale: 0.5,
                    shape: 3.0,
                },
                CondLaw::Normal {
                    mean: 2.0 * (x[0] + 0.5 * x[1] - x[2] * x[2]).tanh(),
                    sd: 0.5,
                },
            ],
            Self::Sim4 => [
                CondLaw::Exponential { rate: 2.0 },
                CondLaw::Exponential { rate: 4.0 },
            ],
        }
    }

    /// Generates `n` subjects: covariates, treatment, both potential
    /// outcomes, the observed outcome, and the true propensity.
    pub fn generate<R: Rng>(&self, n: usize, rng: &mut R) -> Result<SimData> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidArgument("empty sample".into()));
        }
        let chol = cholesky4(&DESIGN3_PARAMS.covariance)?;
        let mut data = SimData {
            x: Vec::with_capacity(n),
            t: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            y0: Vec::with_capacity(n),
            y1: Vec::with_capacity(n),
            pi: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let x = self.draw_covariates(&chol, rng);
            let pi = self.propensity(&x);
            let [law0, law1] = self.laws(&x);
            let t = u8::from(rng.random_bool(pi));
            // Both potential outcomes are drawn regardless of the
            // assignment so the stream layout is arm-independent.
            let y0 = law0.sample(rng);
            let y1 = law1.sample(rng);
            data.y.push(if t == 1 { y1 } else { y0 });
            data.x.push(x);
            data.t.push(t);
            data.y0.push(y0);
            data.y1.push(y1);
            data.pi.push(pi);
        }
        Ok(data)
    }
}

/// Design 1's covariate summaries Z_k = expit(0.8 sum x_j +
/// 0.1 sum |x_j|^k), over all five covariates.
fn weighted_expit(x: &[f64], k: i32) -> f64 {
    let lin: f64 = x.iter().sum();
    let pow: f64 = x.iter().map(|v| v.abs().powi(k)).sum();
    sigmoid(0.8 * lin + 0.1 * pow)
}

/// Design 2's interaction score, shared by the treatment rule and
/// both outcome mixtures.
fn interaction_score(x: &[f64]) -> f64 {
    let mut z = -2.125 + 0.5 * x[0] * x[3] + x[1] * x[4];
    for j in 0..6 {
        z += x[j] * x[j + 6];
    }
    sigmoid(z)
}

/// A generated sample with its ground-truth side information.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub x: Vec<Vec<f64>>,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub pi: Vec<f64>,
}

impl SimData {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// The observable part: covariates, treatment, outcome.
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.y.clone(), self.t.clone(), self.x.clone())
    }
}

/// Dataset for replicate `r` of a replication study: replicates
/// share a seed and differ by RNG stream.
pub fn generate_replicate(design: Design, n: usize, seed: u64, r: u64) -> Result<SimData> {
    design.generate(n, &mut stream_rng(seed, r))
}

/// Exchangeable two-arm data: randomized treatment, five inert
/// U(-2, 2) covariates, and one shared exponential outcome law, so
/// every quantile effect is exactly zero.
pub fn generate_null<R: Rng>(n: usize, rate: f64, rng: &mut R) -> Result<SimData> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidArgument(format!("exponential rate {rate}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let law = CondLaw::Exponential { rate };
    let mut data = SimData {
        x: Vec::with_capacity(n),
        t: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        y0: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        pi: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x: Vec<f64> = (0..5).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let t = u8::from(rng.random_bool(0.5));
        let y0 = law.sample(rng);
        let y1 = law.sample(rng);
        data.y.push(if t == 1 { y1 } else { y0 });
        data.x.push(x);
        data.t.push(t);
        data.y0.push(y0);
        data.y1.push(y1);
        data.pi.push(0.5);
    }
    Ok(data)
}

/// Ground-truth marginal distributions of both arms: densities and
/// CDFs on an evaluation grid, plus a quantile table.
#[derive(Debug, Clone)]
pub struct TrueMarginals {
    pub grid: Vec<f64>,
    /// Densities indexed by arm.
    pub pdf: [Vec<f64>; 2],
    pub cdf: [Vec<f64>; 2],
    pub taus: Vec<f64>,
    pub quantiles: [Vec<f64>; 2],
}

impl TrueMarginals {
    /// True quantile effect at stored level index `ti`.
    pub fn delta(&self, ti: usize) -> f64 {
        self.quantiles[1][ti] - self.quantiles[0][ti]
    }

    pub fn deltas(&self) -> Vec<f64> {
        (0..self.taus.len()).map(|ti| self.delta(ti)).collect()
    }
}

/// Fixed stream for the window probe, so the evaluation window (and
/// with it the grid) depends on the design alone.
const WINDOW_PROBE_SEED: u64 = 0x7a11_5eed;
const WINDOW_PROBES: usize = 4096;

/// Resolution of the internal grid the marginal density is
/// accumulated on before integration.
const ORACLE_FINE_GRID: usize = 2001;

/// Fewest Monte Carlo draws [`true_marginals_on`] accepts; below this
/// the quantile noise would rival the estimation error it is meant to
/// judge.
pub const ORACLE_MIN_MC: usize = 100_000;

/// Ground truth with the default grid resolution and quantile levels.
pub fn true_marginals<R: Rng>(design: Design, n_mc: usize, rng: &mut R) -> Result<TrueMarginals> {
    true_marginals_on(design, n_mc, 200, &default_taus(), rng)
}

/// Ground-truth marginals by Monte Carlo: conditional densities are
/// averaged over `n_mc` fresh covariate draws on a fine fixed grid,
/// the CDF comes from integrating that average, and quantiles invert
/// it. Design 4 takes the closed-form path instead (its laws do not
/// depend on the covariates). The evaluation window is probed on a
/// fixed stream, so grids are reproducible across calls.
pub fn true_marginals_on<R: Rng>(
    design: Design,
    n_mc: usize,
    n_grid: usize,
    taus: &[f64],
    rng: &mut R,
) -> Result<TrueMarginals> {
    design.validate()?;
    if n_mc < ORACLE_MIN_MC {
        return Err(Error::InvalidArgument(format!(
            "ground-truth oracle needs at least {ORACLE_MIN_MC} Monte Carlo draws, got {n_mc}"
        )));
    }
    if n_grid < 2 {
        return Err(Error::InvalidArgument(format!("grid of {n_grid} points")));
    }
    if taus.is_empty() {
        return Err(Error::InvalidArgument("no quantile levels".into()));
    }
    for &tau in taus {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile level {tau} outside (0, 1)"
            )));
        }
    }

    if design == Design::Sim4 {
        return Ok(exact_exponential_marginals(n_grid, taus));
    }

    let chol = cholesky4(&DESIGN3_PARAMS.covariance)?;
    let (lo, hi) = probe_window(design, &chol);
    let laws: Vec<[CondLaw; 2]> = (0..n_mc)
        .map(|_| design.laws(&design.draw_covariates(&chol, rng)))
        .collect();

    let fine = linspace(lo, hi, ORACLE_FINE_GRID);
    let grid = linspace(lo, hi, n_grid);
    let mut pdf = [vec![0.0; n_grid], vec![0.0; n_grid]];
    let mut fine_pdf = [vec![0.0; ORACLE_FINE_GRID], vec![0.0; ORACLE_FINE_GRID]];
    // Fixed-size chunks with an ordered reduction keep the result
    // independent of scheduling.
    let partials: Vec<_> = laws
        .par_chunks(4096)
        .map(|chunk| {
            let mut acc = (
                [vec![0.0; n_grid], vec![0.0; n_grid]],
                [vec![0.0; ORACLE_FINE_GRID], vec![0.0; ORACLE_FINE_GRID]],
            );
            for pair in chunk {
                for (arm, law) in pair.iter().enumerate() {
                    for (a, &g) in acc.0[arm].iter_mut().zip(&grid) {
                        *a += law.pdf(g);
                    }
                    for (a, &g) in acc.1[arm].iter_mut().zip(&fine) {
                        *a += law.pdf(g);
                    }
                }
            }
            acc
        })
        .collect();
    for (coarse, finep) in partials {
        for arm in 0..2 {
            for (a, v) in pdf[arm].iter_mut().zip(&coarse[arm]) {
                *a += v;
            }
            for (a, v) in fine_pdf[arm].iter_mut().zip(&finep[arm]) {
                *a += v;
            }
        }
    }
    let scale = 1.0 / n_mc as f64;
    for arm in 0..2 {
        for v in pdf[arm].iter_mut() {
            *v *= scale;
        }
        for v in fine_pdf[arm].iter_mut() {
            *v *= scale;
        }
    }

    let fine_cdf = [
        cumulative_trapezoid(&fine, &fine_pdf[0]),
        cumulative_trapezoid(&fine, &fine_pdf[1]),
    ];
    let cdf = [
        interp_many(&fine, &fine_cdf[0], &grid),
        interp_many(&fine, &fine_cdf[1], &grid),
    ];
    let quantiles = [
        taus.iter()
            .map(|&tau| inverse_interp(&fine, &fine_cdf[0], tau))
            .collect(),
        taus.iter()
            .map(|&tau| inverse_interp(&fine, &fine_cdf[1], tau))
            .collect(),
    ];
    Ok(TrueMarginals {
        grid,
        pdf,
        cdf,
        taus: taus.to_vec(),
        quantiles,
    })
}

fn exact_exponential_marginals(n_grid: usize, taus: &[f64]) -> TrueMarginals {
    let laws = [
        CondLaw::Exponential { rate: 2.0 },
        CondLaw::Exponential { rate: 4.0 },
    ];
    let (mut lo, mut hi) = laws[0].window();
    for law in &laws[1..] {
        let (l, h) = law.window();
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let grid = linspace(lo, hi, n_grid);
    let value = |f: &dyn Fn(&CondLaw, f64) -> f64, arm: usize| -> Vec<f64> {
        grid.iter().map(|&g| f(&laws[arm], g)).collect()
    };
    let q = |arm: usize| -> Vec<f64> {
        let rate = if arm == 0 { 2.0 } else { 4.0 };
        taus.iter().map(|&tau| -(1.0 - tau).ln() / rate).collect()
    };
    TrueMarginals {
        pdf: [value(&|l, g| l.pdf(g), 0), value(&|l, g| l.pdf(g), 1)],
        cdf: [value(&|l, g| l.cdf(g), 0), value(&|l, g| l.cdf(g), 1)],
        grid,
        taus: taus.to_vec(),
        quantiles: [q(0), q(1)],
    }
}

fn probe_window(design: Design, chol: &[[f64; 4]; 4]) -> (f64, f64) {
    let mut rng = stream_rng(WINDOW_PROBE_SEED, u64::from(design.id()));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..WINDOW_PROBES {
        let x = design.draw_covariates(chol, &mut rng);
        for law in design.laws(&x) {
            let (l, h) = law.window();
            lo = lo.min(l);
            hi = hi.max(h);
        }
    }
    (lo, hi)
}

/// Running trapezoid integral of `values` along `grid`, starting at
/// zero.
fn cumulative_trapezoid(grid: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
        out.push(acc);
    }
    out
}

/// Piecewise-linear interpolation of (xs, ys) at each query point;
/// queries outside the range clamp to the end values.
fn interp_many(xs: &[f64], ys: &[f64], queries: &[f64]) -> Vec<f64> {
    queries
        .iter()
        .map(|&q| {
            if q <= xs[0] {
                return ys[0];
            }
            if q >= xs[xs.len() - 1] {
                return ys[ys.len() - 1];
            }
            let i = xs.partition_point(|&x| x < q);
            let w = (q - xs[i - 1]) / (xs[i] - xs[i - 1]);
            ys[i - 1] * (1.0 - w) + ys[i] * w
        })
        .collect()
}

/// Solves a nondecreasing piecewise-linear CDF for level `tau`;
/// levels beyond the table clamp to the endpoints.
fn inverse_interp(xs: &[f64], cdf: &[f64], tau: f64) -> f64 {
    let last = cdf.len() - 1;
    if tau <= cdf[0] {
        return xs[0];
    }
    if tau >= cdf[last] {
        return xs[last];
    }
    let i = cdf.partition_point(|&c| c < tau);
    let run = cdf[i] - cdf[i - 1];
    if run <= 0.0 {
        return xs[i];
    }
    let w = (tau - cdf[i - 1]) / run;
    xs[i - 1] * (1.0 - w) + xs[i] * w
}
