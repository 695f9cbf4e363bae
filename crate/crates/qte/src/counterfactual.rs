//! Counterfactual outcome distributions and quantile treatment
//! effects.
//!
//! For each propensity draw: build balancing scores, sample the
//! conditional outcome model, then for each retained weight draw
//! average the conditional mixture over one Bayesian-bootstrap draw
//! of the score distribution and invert the marginal CDF at the
//! requested levels. The bootstrap average of spline mixtures is
//! itself a spline mixture, so marginals are carried around as exact
//! mixture weights rather than gridded curves.

use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::network::{
    forward, softmax, GsmHyperParams, MixtureData, MixtureModel, NetworkArchitecture,
    NetworkWeights, Workspace,
};
use crate::numeric::{linspace, sorted_quantile};
use crate::propensity::PropensityDraws;
use crate::rng::stream_rng;
use crate::sampler::{run_chain_on_stream, SamplerConfig};
use crate::spline::{MixtureWeights, SplineBasis};
use crate::{Error, Result};

/// Affine map between the raw outcome scale and the unit interval.
/// The margin keeps counterfactual mass slightly outside the observed
/// range representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeScale {
    y_min: f64,
    y_max: f64,
    margin: f64,
}

impl OutcomeScale {
    pub fn new(y_min: f64, y_max: f64, margin: f64) -> Result<Self> {
        if !y_min.is_finite() || !y_max.is_finite() || !margin.is_finite() {
            return Err(Error::NonFinite("outcome scale bounds".into()));
        }
        if y_min >= y_max {
            return Err(Error::InvalidArgument(format!(
                "outcome range [{y_min}, {y_max}] is empty"
            )));
        }
        if margin < 0.0 {
            return Err(Error::InvalidArgument(format!("negative margin {margin}")));
        }
        Ok(Self {
            y_min,
            y_max,
            margin,
        })
    }

    /// Scale spanning the observed outcomes; `margin` defaults to one
    /// percent of the observed range. Constant outcomes cannot be
    /// normalized.
    pub fn from_outcomes(y: &[f64], margin: Option<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("no outcomes".into()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome {i}")));
        }
        let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if y_min == y_max {
            return Err(Error::InvalidArgument(
                "outcomes are constant, nothing to normalize".into(),
            ));
        }
        let margin = margin.unwrap_or(0.01 * (y_max - y_min));
        Self::new(y_min, y_max, margin)
    }

    pub fn to_unit(&self, y_raw: f64) -> f64 {
        (y_raw - self.y_min + self.margin) / self.jacobian()
    }

    pub fn from_unit(&self, y_unit: f64) -> f64 {
        self.y_min - self.margin + y_unit * self.jacobian()
    }

    /// Length of the represented raw interval. Unit-scale densities
    /// divide by this on the way back to the raw scale; quantile
    /// differences multiply by it.
    pub fn jacobian(&self) -> f64 {
        self.y_max - self.y_min + 2.0 * self.margin
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }
}

/// Maps outcomes onto the unit interval, returning the values and the
/// scale that undoes the map.
pub fn normalize_outcome(y_raw: &[f64], margin: Option<f64>) -> Result<(Vec<f64>, OutcomeScale)> {
    let scale = OutcomeScale::from_outcomes(y_raw, margin)?;
    Ok((y_raw.iter().map(|&v| scale.to_unit(v)).collect(), scale))
}

/// Balancing scores for propensity draw `j`: the draw's propensity
/// first, then the covariates.
pub fn build_double_score(
    x: &[Vec<f64>],
    draws: &PropensityDraws,
    j: usize,
) -> Result<Vec<Vec<f64>>> {
    if j >= draws.num_draws() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: draws.num_draws(),
        });
    }
    if x.len() != draws.num_obs() {
        return Err(Error::ShapeMismatch(format!(
            "{} covariate rows but {} propensities",
            x.len(),
            draws.num_obs()
        )));
    }
    let probs = draws.draw(j);
    Ok(x.iter()
        .zip(probs)
        .map(|(row, &p)| {
            let mut s = Vec::with_capacity(row.len() + 1);
            s.push(p);
            s.extend_from_slice(row);
            s
        })
        .collect())
}

/// What the outcome model conditions on, besides the treatment.
#[derive(Debug, Clone, Copy)]
pub enum ScoreSource<'a> {
    /// Propensity draw concatenated with the covariates.
    Double(&'a PropensityDraws),
    /// The propensity draw alone.
    PropensityOnly(&'a PropensityDraws),
    /// The covariates alone; a single score configuration.
    CovariatesOnly,
}

impl ScoreSource<'_> {
    /// Number of score configurations, each fitted with its own
    /// outcome chain.
    pub fn num_configs(&self) -> usize {
        match self {
            Self::Double(d) | Self::PropensityOnly(d) => d.num_draws(),
            Self::CovariatesOnly => 1,
        }
    }

    /// Width of the score vector handed to the outcome network.
    pub fn score_dim(&self, covariate_dim: usize) -> usize {
        match self {
            Self::Double(_) => 1 + covariate_dim,
            Self::PropensityOnly(_) => 1,
            Self::CovariatesOnly => covariate_dim,
        }
    }

    fn build(&self, x: &[Vec<f64>], j: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Double(d) => build_double_score(x, d, j),
            Self::PropensityOnly(d) => {
                if x.len() != d.num_obs() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} covariate rows but {} propensities",
                        x.len(),
                        d.num_obs()
                    )));
                }
                Ok(d.draw(j).iter().map(|&p| vec![p]).collect())
            }
            Self::CovariatesOnly => Ok(x.to_vec()),
        }
    }
}

/// One Dirichlet(1,...,1) draw over `n` points, as normalized
/// unit-rate exponential variates.
pub fn bayesian_bootstrap<R: Rng>(n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap over zero points".into()));
    }
    let mut u: Vec<f64> = (0..n).map(|_| rng.sample(Exp1)).collect();
    // Exponential variates are positive, so the total is too.
    let total: f64 = u.iter().sum();
    for v in &mut u {
        *v /= total;
    }
    Ok(u)
}

/// A marginal counterfactual distribution. The bootstrap-weighted
/// average of conditional spline mixtures collapses to one mixture;
/// `theta` holds its weights and the grids are evaluations of it.
#[derive(Debug, Clone)]
pub struct MarginalDistribution {
    pub theta: MixtureWeights,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid of {} points",
            grid.len()
        )));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "grid is not strictly increasing".into(),
            ));
        }
    }
    if grid[0] < 0.0 || *grid.last().unwrap() > 1.0 {
        return Err(Error::OutsideUnitInterval(if grid[0] < 0.0 {
            grid[0]
        } else {
            *grid.last().unwrap()
        }));
    }
    Ok(())
}

/// Averages the conditional mixture over scored subjects with the
/// given bootstrap weights, with the counterfactual treatment `t`
/// substituted for every subject.
pub fn marginalize(
    basis: &SplineBasis,
    arch: &NetworkArchitecture,
    weights: &NetworkWeights,
    scores: &[Vec<f64>],
    u: &[f64],
    grid: &[f64],
    t: f64,
) -> Result<MarginalDistribution> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("no scored subjects".into()));
    }
    if scores.len() != u.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} score rows but {} bootstrap weights",
            scores.len(),
            u.len()
        )));
    }
    if arch.output_dim() != basis.size() {
        return Err(Error::ShapeMismatch(format!(
            "network outputs {} mixture weights but basis has {}",
            arch.output_dim(),
            basis.size()
        )));
    }
    if weights.num_params() != arch.num_params() || weights.num_layers() != arch.num_layers() {
        return Err(Error::ShapeMismatch(format!(
            "weights hold {} parameters, architecture wants {}",
            weights.num_params(),
            arch.num_params()
        )));
    }
    if !t.is_finite() {
        return Err(Error::NonFinite("treatment input".into()));
    }
    check_grid(grid)?;
    let total: f64 = u.iter().sum();
    if u.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!(
            "bootstrap weights must be nonnegative and sum to 1, got sum {total}"
        )));
    }

    let mut ws = Workspace::new(arch);
    let mut input = vec![0.0; arch.input_dim()];
    input[0] = t;
    let nl = arch.num_layers();
    let mut theta_bar = vec![0.0; basis.size()];
    for (row, &ui) in scores.iter().zip(u) {
        if row.len() + 1 != arch.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "score row of width {} with network input {}",
                row.len(),
                arch.input_dim()
            )));
        }
        input[1..].copy_from_slice(row);
        forward(weights, &input, &mut ws);
        softmax(&ws.acts[nl - 1], &mut ws.theta);
        for (tb, &th) in theta_bar.iter_mut().zip(&ws.theta) {
            *tb += ui * th;
        }
    }
    let theta = MixtureWeights::new(theta_bar)?;
    let pdf = grid
        .iter()
        .map(|&g| basis.pdf_unchecked(theta.as_slice(), g))
        .collect();
    let cdf = grid
        .iter()
        .map(|&g| basis.cdf_unchecked(theta.as_slice(), g))
        .collect();
    Ok(MarginalDistribution { theta, pdf, cdf })
}

/// A solved quantile. `clamped` marks levels outside the gridded
/// CDF's range, answered with the nearest grid endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileSolution {
    pub y: f64,
    pub clamped: bool,
}

/// Inverts a marginal mixture CDF at level `tau`. The gridded CDF
/// brackets the root; bisection on the exact mixture CDF then runs
/// the bracket down to width 1e-13, which pins the infimum convention
/// and makes results exactly monotone in tau. Mixture densities are
/// bounded, so the final CDF gap is far below 1e-8.
pub fn invert_quantile(
    grid: &[f64],
    cdf: &[f64],
    basis: &SplineBasis,
    theta: &MixtureWeights,
    tau: f64,
) -> Result<QuantileSolution> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "quantile level {tau} outside (0, 1)"
        )));
    }
    check_grid(grid)?;
    if cdf.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} grid points but {} CDF values",
            grid.len(),
            cdf.len()
        )));
    }
    if cdf.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("CDF is not nondecreasing".into()));
    }

    if tau <= cdf[0] {
        return Ok(QuantileSolution {
            y: grid[0],
            clamped: tau < cdf[0],
        });
    }
    let last = cdf.len() - 1;
    if tau > cdf[last] {
        return Ok(QuantileSolution {
            y: grid[last],
            clamped: true,
        });
    }
    // First cell whose upper CDF value reaches tau.
    let k = (0..last)
        .find(|&k| cdf[k] < tau && cdf[k + 1] >= tau)
        .expect("bracket exists after the range checks");
    let exact = |y: f64| basis.cdf_unchecked(theta.as_slice(), y);
    let (mut lo, mut hi) = (grid[k], grid[k + 1]);
    if !(exact(lo) < tau) || !(exact(hi) >= tau) {
        // Grid and exact CDF disagree (inconsistent caller inputs);
        // fall back to the whole grid range.
        lo = grid[0];
        hi = grid[last];
        if exact(lo) >= tau {
            return Ok(QuantileSolution {
                y: lo,
                clamped: false,
            });
        }
        if exact(hi) < tau {
            return Ok(QuantileSolution {
                y: hi,
                clamped: true,
            });
        }
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if exact(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(QuantileSolution {
        y: hi,
        clamped: false,
    })
}

/// Settings for [`estimate`].
#[derive(Debug, Clone)]
pub struct EstimateConfig {
    /// Spline basis size of the outcome mixture.
    pub basis_size: usize,
    /// Hidden widths of the mixture-weight network.
    pub hidden: Vec<usize>,
    /// Outcome chain settings; the seed also drives the bootstrap.
    pub sampler: SamplerConfig,
    pub hyper: GsmHyperParams,
    /// Evaluation grid resolution over the unit interval.
    pub grid_size: usize,
    /// Quantile levels, each strictly inside (0, 1).
    pub taus: Vec<f64>,
    /// Normalization margin; `None` is one percent of the range.
    pub margin: Option<f64>,
    /// Keep per-observation log-densities of every retained draw, for
    /// information-criterion comparisons across model sizes.
    pub keep_log_densities: bool,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self {
            basis_size: 10,
            hidden: vec![8],
            sampler: SamplerConfig::default(),
            hyper: GsmHyperParams::default(),
            grid_size: 200,
            taus: default_taus(),
            margin: None,
            keep_log_densities: false,
        }
    }
}

/// The 19 evenly spaced levels 0.05, 0.10, ..., 0.95.
pub fn default_taus() -> Vec<f64> {
    (1..20).map(|i| f64::from(i) / 20.0).collect()
}

#[derive(Debug, Clone)]
struct DrawMarginals {
    pdf: [Vec<f64>; 2],
    cdf: [Vec<f64>; 2],
    quantiles: [Vec<f64>; 2],
    theta: [MixtureWeights; 2],
}

/// Posterior draws of both counterfactual marginals, one entry per
/// (score configuration, weight draw) pair in configuration-major
/// order. Everything here lives on the unit outcome scale;
/// [`summarize`] maps back to the raw scale.
#[derive(Debug, Clone)]
pub struct CounterfactualDraws {
    grid: Vec<f64>,
    taus: Vec<f64>,
    scale: OutcomeScale,
    draws: Vec<DrawMarginals>,
    configs: usize,
    per_config: usize,
    divergence_rates: Vec<f64>,
    step_sizes: Vec<f64>,
    log_densities: Option<Vec<Vec<f64>>>,
}

impl CounterfactualDraws {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn scale(&self) -> &OutcomeScale {
        &self.scale
    }

    /// Total retained draws: configurations times draws per chain.
    pub fn num_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn num_configs(&self) -> usize {
        self.configs
    }

    pub fn draws_per_config(&self) -> usize {
        self.per_config
    }

    /// Density of draw `d` for arm `t` on the grid.
    pub fn pdf(&self, d: usize, t: usize) -> &[f64] {
        &self.draws[d].pdf[t]
    }

    /// CDF of draw `d` for arm `t` on the grid.
    pub fn cdf(&self, d: usize, t: usize) -> &[f64] {
        &self.draws[d].cdf[t]
    }

    /// Marginal mixture weights of draw `d` for arm `t`.
    pub fn marginal_mixture(&self, d: usize, t: usize) -> &MixtureWeights {
        &self.draws[d].theta[t]
    }

    /// Quantile of draw `d`, arm `t`, at stored level index `ti`.
    pub fn quantile(&self, d: usize, t: usize, ti: usize) -> f64 {
        self.draws[d].quantiles[t][ti]
    }

    /// Treatment effect of draw `d` at stored level index `ti`:
    /// treated minus control quantile, by construction.
    pub fn delta(&self, d: usize, ti: usize) -> f64 {
        self.draws[d].quantiles[1][ti] - self.draws[d].quantiles[0][ti]
    }

    /// Pointwise mean of the per-draw CDFs for arm `t`.
    pub fn mean_cdf(&self, t: usize) -> Vec<f64> {
        self.mean_curve(|d| &d.cdf[t])
    }

    /// Pointwise mean of the per-draw densities for arm `t`.
    pub fn mean_pdf(&self, t: usize) -> Vec<f64> {
        self.mean_curve(|d| &d.pdf[t])
    }

    fn mean_curve<'a, F: Fn(&'a DrawMarginals) -> &'a [f64]>(&'a self, get: F) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        for d in &self.draws {
            for (a, v) in acc.iter_mut().zip(get(d)) {
                *a += v;
            }
        }
        let n = self.draws.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        acc
    }

    /// Post-burn-in divergence rate per configuration's chain.
    pub fn divergence_rates(&self) -> &[f64] {
        &self.divergence_rates
    }

    /// Adapted step size per configuration's chain.
    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }

    /// Per-observation conditional log-densities, one row per
    /// retained draw across all configurations, if kept.
    pub fn log_densities(&self) -> Option<&[Vec<f64>]> {
        self.log_densities.as_deref()
    }
}

struct PerConfig {
    draws: Vec<DrawMarginals>,
    divergence_rate: f64,
    step_size: f64,
    log_densities: Option<Vec<Vec<f64>>>,
}

/// Runs the posterior pipeline: per score configuration, one outcome
/// chain on its own RNG stream, then one bootstrap draw and both
/// counterfactual marginals per retained weight draw. Configurations
/// run in parallel; assembly order is fixed.
pub fn estimate(
    data: &Dataset,
    scores: ScoreSource<'_>,
    config: &EstimateConfig,
) -> Result<CounterfactualDraws> {
    config.sampler.validate()?;
    config.hyper.validate()?;
    if config.grid_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid of {} points",
            config.grid_size
        )));
    }
    if config.taus.is_empty() {
        return Err(Error::InvalidArgument("no quantile levels".into()));
    }
    for &tau in &config.taus {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "quantile level {tau} outside (0, 1)"
            )));
        }
    }
    if data.num_treated() == 0 {
        return Err(Error::SingleArm { missing: "treated" });
    }
    if data.num_control() == 0 {
        return Err(Error::SingleArm { missing: "control" });
    }
    match scores {
        ScoreSource::Double(d) | ScoreSource::PropensityOnly(d) => {
            if d.num_obs() != data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} subjects but {} propensities",
                    data.len(),
                    d.num_obs()
                )));
            }
        }
        ScoreSource::CovariatesOnly => {}
    }

    let (y_unit, scale) = normalize_outcome(data.y(), config.margin)?;
    let basis = SplineBasis::new(config.basis_size)?;
    let grid = linspace(0.0, 1.0, config.grid_size);
    let n_configs = scores.num_configs();

    let per: Vec<PerConfig> = (0..n_configs)
        .into_par_iter()
        .map(|j| -> Result<PerConfig> {
            let score_rows = scores.build(data.x(), j)?;
            let width = score_rows[0].len();
            let mix = MixtureData::new(&basis, &y_unit, data.t(), &score_rows)?;
            let arch =
                NetworkArchitecture::new(1 + width, config.hidden.clone(), config.basis_size)?;
            let model = MixtureModel::new(arch.clone(), &mix)?;
            let chain =
                run_chain_on_stream(&model, &config.hyper, &config.sampler, 1 + j as u64)?;
            let mut boot = stream_rng(config.sampler.seed, 100 + j as u64);

            let mut draws = Vec::with_capacity(chain.len());
            let mut lds = config.keep_log_densities.then(Vec::new);
            for w in &chain.weights {
                let u = bayesian_bootstrap(data.len(), &mut boot)?;
                let m0 = marginalize(&basis, &arch, w, &score_rows, &u, &grid, 0.0)?;
                let m1 = marginalize(&basis, &arch, w, &score_rows, &u, &grid, 1.0)?;
                let solve = |m: &MarginalDistribution| -> Result<Vec<f64>> {
                    config
                        .taus
                        .iter()
                        .map(|&tau| {
                            invert_quantile(&grid, &m.cdf, &basis, &m.theta, tau).map(|s| s.y)
                        })
                        .collect()
                };
                let quantiles = [solve(&m0)?, solve(&m1)?];
                if let Some(lds) = &mut lds {
                    lds.push(model.obs_log_densities(w)?);
                }
                draws.push(DrawMarginals {
                    pdf: [m0.pdf, m1.pdf],
                    cdf: [m0.cdf, m1.cdf],
                    quantiles,
                    theta: [m0.theta, m1.theta],
                });
            }
            Ok(PerConfig {
                draws,
                divergence_rate: chain.divergence_rate(),
                step_size: chain.step_size,
                log_densities: lds,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let per_config = config.sampler.num_draws();
    let mut draws = Vec::with_capacity(n_configs * per_config);
    let mut divergence_rates = Vec::with_capacity(n_configs);
    let mut step_sizes = Vec::with_capacity(n_configs);
    let mut log_densities = config.keep_log_densities.then(Vec::new);
    for p in per {
        draws.extend(p.draws);
        divergence_rates.push(p.divergence_rate);
        step_sizes.push(p.step_size);
        if let (Some(all), Some(one)) = (&mut log_densities, p.log_densities) {
            all.extend(one);
        }
    }
    Ok(CounterfactualDraws {
        grid,
        taus: config.taus.clone(),
        scale,
        draws,
        configs: n_configs,
        per_config,
        divergence_rates,
        step_sizes,
        log_densities,
    })
}

/// Point estimate with an equal-tailed credible interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStat {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

fn stat(values: &mut Vec<f64>, ci_level: f64) -> SummaryStat {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite summaries"));
    SummaryStat {
        mean,
        lo: sorted_quantile(values, 0.5 * (1.0 - ci_level)),
        hi: sorted_quantile(values, 0.5 * (1.0 + ci_level)),
    }
}

/// Quantiles of both arms and their difference at one level, on the
/// raw outcome scale.
#[derive(Debug, Clone)]
pub struct QuantileSummary {
    pub tau: f64,
    pub q0: SummaryStat,
    pub q1: SummaryStat,
    pub delta: SummaryStat,
}

/// Densities and CDFs of both arms at one raw-scale grid point.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub y: f64,
    pub pdf: [SummaryStat; 2],
    pub cdf: [SummaryStat; 2],
}

#[derive(Debug, Clone)]
pub struct Summary {
    pub ci_level: f64,
    pub quantiles: Vec<QuantileSummary>,
    pub curve: Vec<CurvePoint>,
}

/// Posterior means and equal-tailed percentile intervals over all
/// draws, back-transformed to the raw outcome scale. `taus` picks
/// levels stored in the draws. A single draw yields zero-width
/// intervals equal to that draw.
pub fn summarize(draws: &CounterfactualDraws, taus: &[f64], ci_level: f64) -> Result<Summary> {
    if !(ci_level > 0.0 && ci_level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "interval level {ci_level} outside (0, 1)"
        )));
    }
    if taus.is_empty() {
        return Err(Error::InvalidArgument("no quantile levels".into()));
    }
    let indices: Vec<usize> = taus
        .iter()
        .map(|&tau| {
            draws
                .taus
                .iter()
                .position(|&t| (t - tau).abs() < 1e-9)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("level {tau} was not estimated"))
                })
        })
        .collect::<Result<_>>()?;

    let scale = &draws.scale;
    let n = draws.num_draws();
    let mut quantiles = Vec::with_capacity(indices.len());
    for (&tau, &ti) in taus.iter().zip(&indices) {
        let mut q0: Vec<f64> = (0..n)
            .map(|d| scale.from_unit(draws.quantile(d, 0, ti)))
            .collect();
        let mut q1: Vec<f64> = (0..n)
            .map(|d| scale.from_unit(draws.quantile(d, 1, ti)))
            .collect();
        let mut delta: Vec<f64> = (0..n)
            .map(|d| draws.delta(d, ti) * scale.jacobian())
            .collect();
        quantiles.push(QuantileSummary {
            tau,
            q0: stat(&mut q0, ci_level),
            q1: stat(&mut q1, ci_level),
            delta: stat(&mut delta, ci_level),
        });
    }

    let jac = scale.jacobian();
    let mut curve = Vec::with_capacity(draws.grid.len());
    for (g, &gy) in draws.grid.iter().enumerate() {
        let mut point = CurvePoint {
            y: scale.from_unit(gy),
            pdf: [SummaryStat {
                mean: 0.0,
                lo: 0.0,
                hi: 0.0,
            }; 2],
            cdf: [SummaryStat {
                mean: 0.0,
                lo: 0.0,
                hi: 0.0,
            }; 2],
        };
        for t in 0..2 {
            let mut fs: Vec<f64> = (0..n).map(|d| draws.pdf(d, t)[g] / jac).collect();
            let mut cs: Vec<f64> = (0..n).map(|d| draws.cdf(d, t)[g]).collect();
            point.pdf[t] = stat(&mut fs, ci_level);
            point.cdf[t] = stat(&mut cs, ci_level);
        }
        curve.push(point);
    }

    Ok(Summary {
        ci_level,
        quantiles,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::mixture_weights;
    use crate::testutil::integrate;

    fn unit_grid(n: usize) -> Vec<f64> {
        linspace(0.0, 1.0, n)
    }

    #[test]
    fn min_max_identity_without_margin() {
        let (y, scale) = normalize_outcome(&[2.0, 4.0, 6.0], Some(0.0)).unwrap();
        assert_eq!(y, vec![0.0, 0.5, 1.0]);
        assert_eq!(scale.jacobian(), 4.0);
    }

    #[test]
    fn normalization_round_trips() {
        let raw = [3.2, -1.5, 0.0, 9.75, 2.25];
        let (y, scale) = normalize_outcome(&raw, None).unwrap();
        for (u, r) in y.iter().zip(&raw) {
            assert!((scale.from_unit(*u) - r).abs() < 1e-12);
            assert!((0.0..=1.0).contains(u));
        }
        // Default margin is one percent of the range.
        assert!((scale.margin() - 0.01 * 11.25).abs() < 1e-12);
    }

    #[test]
    fn constant_outcomes_cannot_normalize() {
        assert!(normalize_outcome(&[1.0, 1.0, 1.0], None).is_err());
        assert!(normalize_outcome(&[], None).is_err());
        assert!(normalize_outcome(&[1.0, f64::NAN], None).is_err());
        assert!(OutcomeScale::new(0.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn back_transformed_density_keeps_unit_mass() {
        // A unit-scale mixture density divided by the Jacobian must
        // integrate to one over the represented raw interval.
        let (_, scale) = normalize_outcome(&[1.0, 3.0], None).unwrap();
        let basis = SplineBasis::new(6).unwrap();
        let theta = MixtureWeights::new(vec![0.3, 0.05, 0.15, 0.2, 0.1, 0.2]).unwrap();
        let f_raw = |y_raw: f64| {
            basis.pdf_unchecked(theta.as_slice(), scale.to_unit(y_raw)) / scale.jacobian()
        };
        let lo = scale.y_min() - scale.margin();
        let hi = scale.y_max() + scale.margin();
        let mass = integrate(&f_raw, lo, hi, 1e-9);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn double_score_concatenates_propensity_first() {
        let draws = PropensityDraws::known(&[0.5, 0.25]).unwrap();
        let x = vec![vec![0.1, 0.2], vec![-1.0, 2.0]];
        let s = build_double_score(&x, &draws, 0).unwrap();
        assert_eq!(s[0], vec![0.5, 0.1, 0.2]);
        assert_eq!(s[1], vec![0.25, -1.0, 2.0]);
        assert!(s.iter().all(|row| row.len() == 3));
        assert!(build_double_score(&x, &draws, 1).is_err());
        assert!(build_double_score(&x[..1], &draws, 0).is_err());
    }

    #[test]
    fn constant_propensity_passes_through() {
        let draws = PropensityDraws::constant(0.4, 3).unwrap();
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let s = build_double_score(&x, &draws, 0).unwrap();
        assert!(s.iter().all(|row| row[0] == 0.4));
    }

    #[test]
    fn bootstrap_weights_live_on_the_simplex() {
        let mut rng = stream_rng(3, 0);
        assert_eq!(bayesian_bootstrap(1, &mut rng).unwrap(), vec![1.0]);
        for _ in 0..200 {
            let u = bayesian_bootstrap(7, &mut rng).unwrap();
            assert!((u.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(u.iter().all(|&v| v >= 0.0));
        }
        assert!(bayesian_bootstrap(0, &mut rng).is_err());
    }

    #[test]
    fn bootstrap_weights_have_dirichlet_means() {
        let mut rng = stream_rng(11, 0);
        let mut means = [0.0; 3];
        let reps = 100_000;
        for _ in 0..reps {
            let u = bayesian_bootstrap(3, &mut rng).unwrap();
            for (m, v) in means.iter_mut().zip(&u) {
                *m += v;
            }
        }
        for m in means {
            let m = m / reps as f64;
            assert!((m - 1.0 / 3.0).abs() < 0.005, "mean {m}");
        }
    }

    fn toy_model(k: usize, width: usize) -> (SplineBasis, NetworkArchitecture, NetworkWeights) {
        let basis = SplineBasis::new(k).unwrap();
        let arch = NetworkArchitecture::new(1 + width, vec![3], k).unwrap();
        let mut rng = stream_rng(17, 0);
        let weights = NetworkWeights::sample_gaussian(&arch, 0.8, &mut rng);
        (basis, arch, weights)
    }

    #[test]
    fn singleton_bootstrap_recovers_the_conditional() {
        let (basis, arch, weights) = toy_model(5, 2);
        let score = vec![vec![0.3, -0.7]];
        let grid = unit_grid(40);
        let m = marginalize(&basis, &arch, &weights, &score, &[1.0], &grid, 1.0).unwrap();
        let theta = mixture_weights(&arch, &weights, 1.0, &score[0]).unwrap();
        for (a, b) in m.theta.as_slice().iter().zip(theta.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        for (g, p) in grid.iter().zip(&m.pdf) {
            assert!((basis.pdf(&theta, *g).unwrap() - p).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_scores_collapse_to_one_conditional() {
        let (basis, arch, weights) = toy_model(4, 1);
        let scores = vec![vec![0.25], vec![0.25]];
        let grid = unit_grid(20);
        let m = marginalize(&basis, &arch, &weights, &scores, &[0.5, 0.5], &grid, 0.0).unwrap();
        let theta = mixture_weights(&arch, &weights, 0.0, &scores[0]).unwrap();
        for (a, b) in m.theta.as_slice().iter().zip(theta.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn marginal_matches_double_loop_oracle() {
        // Naive oracle: average conditional pdf/cdf values per grid
        // point instead of averaging mixture weights.
        let (basis, arch, weights) = toy_model(6, 3);
        let mut rng = stream_rng(29, 0);
        let scores: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let u = bayesian_bootstrap(5, &mut rng).unwrap();
        let grid = unit_grid(50);
        let m = marginalize(&basis, &arch, &weights, &scores, &u, &grid, 1.0).unwrap();
        for (g, (&pdf, &cdf)) in grid.iter().zip(m.pdf.iter().zip(&m.cdf)) {
            let mut oracle_pdf = 0.0;
            let mut oracle_cdf = 0.0;
            for (row, &ui) in scores.iter().zip(&u) {
                let theta = mixture_weights(&arch, &weights, 1.0, row).unwrap();
                oracle_pdf += ui * basis.pdf(&theta, *g).unwrap();
                oracle_cdf += ui * basis.cdf(&theta, *g).unwrap();
            }
            assert!((pdf - oracle_pdf).abs() < 1e-12, "pdf at {g}");
            assert!((cdf - oracle_cdf).abs() < 1e-12, "cdf at {g}");
        }
    }

    #[test]
    fn rescaled_bootstrap_weights_change_nothing() {
        let (basis, arch, weights) = toy_model(4, 1);
        let scores = vec![vec![0.1], vec![0.6], vec![0.9]];
        let mut rng = stream_rng(31, 0);
        let u = bayesian_bootstrap(3, &mut rng).unwrap();
        let scaled: Vec<f64> = {
            let c = 37.5;
            let total: f64 = u.iter().map(|v| v * c).sum();
            u.iter().map(|v| v * c / total).collect()
        };
        let grid = unit_grid(30);
        let a = marginalize(&basis, &arch, &weights, &scores, &u, &grid, 0.0).unwrap();
        let b = marginalize(&basis, &arch, &weights, &scores, &scaled, &grid, 0.0).unwrap();
        for (x, y) in a.pdf.iter().zip(&b.pdf) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.cdf.iter().zip(&b.cdf) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn marginalize_validates_inputs() {
        let (basis, arch, weights) = toy_model(4, 1);
        let grid = unit_grid(10);
        let scores = vec![vec![0.5]];
        let bad_sum = marginalize(&basis, &arch, &weights, &scores, &[0.7], &grid, 0.0);
        assert!(matches!(bad_sum.unwrap_err(), Error::InvalidWeights(_)));
        let bad_grid = marginalize(&basis, &arch, &weights, &scores, &[1.0], &[0.5, 0.5], 0.0);
        assert!(bad_grid.is_err());
        let wide = vec![vec![0.5, 0.5]];
        assert!(marginalize(&basis, &arch, &weights, &wide, &[1.0], &grid, 0.0).is_err());
    }

    #[test]
    fn uniform_cdf_inverts_to_identity() {
        let basis = SplineBasis::new(2).unwrap();
        // Equal weights make the mixture uniform: F(y) = y.
        let theta = MixtureWeights::uniform(2).unwrap();
        let grid = unit_grid(21);
        let cdf: Vec<f64> = grid.iter().map(|&g| basis.cdf(&theta, g).unwrap()).collect();
        for tau in [0.1, 0.3, 0.5, 0.77] {
            let s = invert_quantile(&grid, &cdf, &basis, &theta, tau).unwrap();
            assert!(!s.clamped);
            assert!((s.y - tau).abs() < 1e-8, "tau {tau} gave {}", s.y);
        }
    }

    #[test]
    fn quadratic_cdf_inverts_analytically() {
        // theta = (1, 0) gives F(y) = 2y - y^2; solving F = 0.75
        // yields y = 0.5 exactly.
        let basis = SplineBasis::new(2).unwrap();
        let theta = MixtureWeights::new(vec![1.0, 0.0]).unwrap();
        let grid = unit_grid(11);
        let cdf: Vec<f64> = grid.iter().map(|&g| basis.cdf(&theta, g).unwrap()).collect();
        let s = invert_quantile(&grid, &cdf, &basis, &theta, 0.75).unwrap();
        assert!((s.y - 0.5).abs() < 1e-8, "got {}", s.y);
    }

    #[test]
    fn inversion_is_monotone_in_tau() {
        // Keep the generator dependency-free: xorshift is plenty.
        let mut state = 0x7c1f_2e3d_9a8b_5647u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let basis = SplineBasis::new(7).unwrap();
        let grid = unit_grid(41);
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..7).map(|_| next() + 1e-6).collect();
            let total: f64 = raw.iter().sum();
            let theta =
                MixtureWeights::new(raw.iter().map(|v| v / total).collect()).unwrap();
            let cdf: Vec<f64> = grid
                .iter()
                .map(|&g| basis.cdf(&theta, g).unwrap())
                .collect();
            let mut taus = [next(), next(), next(), next(), next(), next(), next(), next(), next(), next()];
            taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut prev = f64::NEG_INFINITY;
            for &tau in taus.iter().filter(|t| **t > 0.0 && **t < 1.0) {
                let s = invert_quantile(&grid, &cdf, &basis, &theta, tau).unwrap();
                assert!(s.y >= prev, "tau {tau}: {} < {prev}", s.y);
                prev = s.y;
            }
        }
    }

    #[test]
    fn out_of_range_levels_are_clamped_and_flagged() {
        let basis = SplineBasis::new(2).unwrap();
        let theta = MixtureWeights::uniform(2).unwrap();
        // Sub-grid covering CDF values 0.2 to 0.8 only.
        let grid = linspace(0.2, 0.8, 13);
        let cdf: Vec<f64> = grid.iter().map(|&g| basis.cdf(&theta, g).unwrap()).collect();
        let low = invert_quantile(&grid, &cdf, &basis, &theta, 0.05).unwrap();
        assert!(low.clamped);
        assert_eq!(low.y, 0.2);
        let high = invert_quantile(&grid, &cdf, &basis, &theta, 0.95).unwrap();
        assert!(high.clamped);
        assert_eq!(high.y, 0.8);
        let inside = invert_quantile(&grid, &cdf, &basis, &theta, 0.5).unwrap();
        assert!(!inside.clamped);
        assert!(invert_quantile(&grid, &cdf, &basis, &theta, 1.2).is_err());
    }

    fn tiny_dataset(n: usize, seed: u64) -> Dataset {
        // Two arms with genuinely different outcome distributions.
        let mut rng = stream_rng(seed, 7);
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let ti = (i % 2) as u8;
            let xi: f64 = rng.random::<f64>() * 2.0 - 1.0;
            let noise: f64 = rng.random::<f64>();
            let yi = if ti == 1 { 1.5 + noise } else { noise };
            y.push(yi + 0.1 * xi);
            t.push(ti);
            x.push(vec![xi]);
        }
        Dataset::new(y, t, x).unwrap()
    }

    fn tiny_config(seed: u64) -> EstimateConfig {
        EstimateConfig {
            basis_size: 4,
            hidden: vec![3],
            sampler: SamplerConfig {
                n_iter: 80,
                n_burnin: 40,
                thin: 10,
                seed,
                ..SamplerConfig::default()
            },
            grid_size: 30,
            taus: vec![0.25, 0.5, 0.75],
            ..EstimateConfig::default()
        }
    }

    #[test]
    fn estimate_emits_the_full_draw_grid() {
        let data = tiny_dataset(40, 1);
        let prop = PropensityDraws::from_rows(vec![vec![0.5; 40], vec![0.6; 40]]).unwrap();
        let draws = estimate(&data, ScoreSource::Double(&prop), &tiny_config(5)).unwrap();
        assert_eq!(draws.num_configs(), 2);
        assert_eq!(draws.draws_per_config(), 4);
        assert_eq!(draws.num_draws(), 8);
        assert_eq!(draws.grid().len(), 30);

        for d in 0..draws.num_draws() {
            for t in 0..2 {
                let cdf = draws.cdf(d, t);
                assert!(cdf.windows(2).all(|w| w[1] >= w[0]));
                assert!(cdf[0] >= 0.0 && *cdf.last().unwrap() <= 1.0 + 1e-9);
                assert!(draws.pdf(d, t).iter().all(|&f| f >= 0.0));
            }
            for ti in 0..3 {
                let delta = draws.delta(d, ti);
                let direct = draws.quantile(d, 1, ti) - draws.quantile(d, 0, ti);
                assert_eq!(delta, direct);
            }
        }
    }

    #[test]
    fn single_draw_summary_is_the_draw_itself() {
        let data = tiny_dataset(30, 2);
        let prop = PropensityDraws::constant(0.5, 30).unwrap();
        let mut config = tiny_config(9);
        config.sampler.n_iter = 50;
        config.sampler.n_burnin = 40;
        config.sampler.thin = 10;
        let draws = estimate(&data, ScoreSource::Double(&prop), &config).unwrap();
        assert_eq!(draws.num_draws(), 1);
        let summary = summarize(&draws, &[0.5], 0.95).unwrap();
        let q = &summary.quantiles[0];
        let want = draws.delta(0, 1) * draws.scale().jacobian();
        assert!((q.delta.mean - want).abs() < 1e-12);
        assert_eq!(q.delta.lo, q.delta.hi);
        assert!((q.delta.lo - want).abs() < 1e-12);
    }

    #[test]
    fn mean_delta_equals_difference_of_mean_quantiles() {
        let data = tiny_dataset(40, 3);
        let prop = PropensityDraws::constant(0.5, 40).unwrap();
        let draws = estimate(&data, ScoreSource::Double(&prop), &tiny_config(11)).unwrap();
        let summary = summarize(&draws, &[0.5], 0.9).unwrap();
        let q = &summary.quantiles[0];
        assert!((q.delta.mean - (q.q1.mean - q.q0.mean)).abs() < 1e-10);
    }

    #[test]
    fn estimate_is_deterministic() {
        let data = tiny_dataset(40, 4);
        let prop = PropensityDraws::constant(0.5, 40).unwrap();
        let a = estimate(&data, ScoreSource::Double(&prop), &tiny_config(13)).unwrap();
        let b = estimate(&data, ScoreSource::Double(&prop), &tiny_config(13)).unwrap();
        assert_eq!(a.num_draws(), b.num_draws());
        for d in 0..a.num_draws() {
            assert_eq!(a.pdf(d, 0), b.pdf(d, 0));
            assert_eq!(a.cdf(d, 1), b.cdf(d, 1));
            for ti in 0..3 {
                assert_eq!(a.delta(d, ti), b.delta(d, ti));
            }
        }
    }

    #[test]
    fn score_variants_reshape_the_network_input() {
        let data = tiny_dataset(36, 5);
        let prop = PropensityDraws::constant(0.5, 36).unwrap();
        let config = tiny_config(15);
        for source in [
            ScoreSource::Double(&prop),
            ScoreSource::PropensityOnly(&prop),
            ScoreSource::CovariatesOnly,
        ] {
            let draws = estimate(&data, source, &config).unwrap();
            assert_eq!(draws.num_draws(), 4 * source.num_configs());
        }
    }

    #[test]
    fn estimate_rejects_degenerate_inputs() {
        let data = tiny_dataset(20, 6);
        let prop = PropensityDraws::constant(0.5, 20).unwrap();
        let mut bad = tiny_config(1);
        bad.taus = vec![1.5];
        assert!(estimate(&data, ScoreSource::Double(&prop), &bad).is_err());
        let mut no_taus = tiny_config(1);
        no_taus.taus.clear();
        assert!(estimate(&data, ScoreSource::Double(&prop), &no_taus).is_err());

        let treated_only =
            Dataset::new(vec![1.0, 2.0], vec![1, 1], vec![vec![0.0], vec![0.0]]).unwrap();
        let prop2 = PropensityDraws::constant(0.5, 2).unwrap();
        assert!(matches!(
            estimate(&treated_only, ScoreSource::Double(&prop2), &tiny_config(1)).unwrap_err(),
            Error::SingleArm { missing: "control" }
        ));

        let short_prop = PropensityDraws::constant(0.5, 5).unwrap();
        assert!(estimate(&data, ScoreSource::Double(&short_prop), &tiny_config(1)).is_err());
    }

    #[test]
    fn log_densities_cover_every_draw_when_kept() {
        let data = tiny_dataset(24, 8);
        let prop = PropensityDraws::from_rows(vec![vec![0.5; 24], vec![0.55; 24]]).unwrap();
        let mut config = tiny_config(17);
        config.keep_log_densities = true;
        let draws = estimate(&data, ScoreSource::Double(&prop), &config).unwrap();
        let lds = draws.log_densities().unwrap();
        assert_eq!(lds.len(), draws.num_draws());
        assert!(lds.iter().all(|row| row.len() == data.len()));
        assert!(lds.iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn null_data_covers_zero_effect() {
        // Exchangeable arms: the credible interval for the median
        // effect should cover zero in nearly all replicates.
        let mut covered = 0;
        let reps = 30;
        for r in 0..reps {
            let n = 50;
            let mut rng = stream_rng(1000 + r, 3);
            let mut y = Vec::with_capacity(n);
            let mut t = Vec::with_capacity(n);
            for i in 0..n {
                let e: f64 = rng.sample(Exp1);
                y.push(e / 2.0);
                t.push((i % 2) as u8);
            }
            let data = Dataset::new(y, t, vec![vec![]; n]).unwrap();
            let prop = PropensityDraws::constant(0.5, n).unwrap();
            let config = EstimateConfig {
                basis_size: 4,
                hidden: vec![2],
                sampler: SamplerConfig {
                    n_iter: 220,
                    n_burnin: 100,
                    thin: 12,
                    seed: 5000 + r,
                    ..SamplerConfig::default()
                },
                grid_size: 60,
                taus: vec![0.5],
                ..EstimateConfig::default()
            };
            let draws = estimate(&data, ScoreSource::Double(&prop), &config).unwrap();
            let summary = summarize(&draws, &[0.5], 0.95).unwrap();
            let d = &summary.quantiles[0].delta;
            if d.lo <= 0.0 && d.hi >= 0.0 {
                covered += 1;
            }
        }
        assert!(covered * 10 >= reps * 9, "covered {covered} of {reps}");
    }
}
