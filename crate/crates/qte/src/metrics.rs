//! Replication-study metrics and information-criterion model choice.
//!
//! The replication metrics quantify how close estimated curves and
//! quantile effects come to a known ground truth: integrated squared
//! error for densities, per-level root mean squared error and average
//! absolute bias for quantile effects. WAIC scores fitted models on
//! observed data alone and drives the basis-size and width selection.

use crate::counterfactual::{estimate, CounterfactualDraws, EstimateConfig, ScoreSource};
use crate::data::Dataset;
use crate::network::NetworkArchitecture;
use crate::numeric::logsumexp;
use crate::{Error, Result};

/// Function values tabulated on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} grid points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid of {} points",
                grid.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(
                "grid is not strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grid function value".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Integrated squared error between two functions tabulated on one
/// equidistant grid: the trapezoid rule applied to the squared
/// difference, so interior points carry full weight and the endpoints
/// half weight.
pub fn ise(f_hat: &GridFunction, f_true: &GridFunction) -> Result<f64> {
    if f_hat.grid != f_true.grid {
        return Err(Error::ShapeMismatch(
            "integrated squared error needs both functions on one grid".into(),
        ));
    }
    let grid = &f_hat.grid;
    let n = grid.len();
    let h = (grid[n - 1] - grid[0]) / (n - 1) as f64;
    let tol = 1e-9 * h.abs().max(1e-300);
    if grid.windows(2).any(|w| (w[1] - w[0] - h).abs() > tol) {
        return Err(Error::InvalidArgument(
            "integrated squared error needs an equidistant grid".into(),
        ));
    }
    let sq = |i: usize| -> f64 {
        let e = f_hat.values[i] - f_true.values[i];
        e * e
    };
    let mut total = 0.5 * (sq(0) + sq(n - 1));
    for i in 1..n - 1 {
        total += sq(i);
    }
    Ok(h * total)
}

/// Root mean squared error of per-replicate estimates of one quantile
/// effect against its true value.
pub fn rmse_tau(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no replicate estimates".into()));
    }
    if !truth.is_finite() || estimates.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("quantile effect estimate".into()));
    }
    let mss = estimates
        .iter()
        .map(|e| (e - truth) * (e - truth))
        .sum::<f64>()
        / estimates.len() as f64;
    Ok(mss.sqrt())
}

/// The canonical quantile levels 0.05, 0.10, ..., 0.95 the average
/// absolute bias is defined over.
pub const AAB_LEVELS: usize = 19;

/// Average absolute bias over the 19 canonical quantile levels: the
/// estimates are first averaged across replicates at each level, then
/// absolute errors against the truth are averaged across levels.
/// `estimates` holds one row per replicate.
pub fn aab(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    if truth.len() != AAB_LEVELS {
        return Err(Error::InvalidArgument(format!(
            "average absolute bias is defined over {AAB_LEVELS} quantile levels, got {}; \
             aab_any_levels drops that check",
            truth.len()
        )));
    }
    aab_any_levels(estimates, truth)
}

/// [`aab`] without the canonical level-count check, for explicitly
/// nonstandard level sets.
pub fn aab_any_levels(estimates: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    let bias = mean_bias(estimates, truth)?;
    Ok(bias.iter().map(|b| b.abs()).sum::<f64>() / bias.len() as f64)
}

/// One average absolute bias per replicate, for dispersion summaries
/// across replicates.
pub fn aab_per_replicate(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    validate_replicates(estimates, truth)?;
    Ok(estimates
        .iter()
        .map(|row| {
            row.iter()
                .zip(truth)
                .map(|(e, t)| (e - t).abs())
                .sum::<f64>()
                / truth.len() as f64
        })
        .collect())
}

fn validate_replicates(estimates: &[Vec<f64>], truth: &[f64]) -> Result<()> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("no replicate estimates".into()));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no quantile levels".into()));
    }
    if truth.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("true quantile effect".into()));
    }
    for (r, row) in estimates.iter().enumerate() {
        if row.len() != truth.len() {
            return Err(Error::ShapeMismatch(format!(
                "replicate {r} has {} levels, truth has {}",
                row.len(),
                truth.len()
            )));
        }
        if row.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("estimate in replicate {r}")));
        }
    }
    Ok(())
}

fn mean_bias(estimates: &[Vec<f64>], truth: &[f64]) -> Result<Vec<f64>> {
    validate_replicates(estimates, truth)?;
    let n = estimates.len() as f64;
    Ok((0..truth.len())
        .map(|i| estimates.iter().map(|row| row[i]).sum::<f64>() / n - truth[i])
        .collect())
}

/// Widely applicable information criterion on the deviance scale from
/// a draws-by-observations matrix of pointwise log-likelihoods:
/// -2 sum_i [ log mean_s exp(ll_si) - var_s(ll_si) ], with the
/// log-mean-exp stabilized and the variance taken with the n-1
/// denominator. Lower is better.
pub fn waic(log_lik: &[Vec<f64>]) -> Result<f64> {
    let s = log_lik.len();
    if s < 2 {
        return Err(Error::InvalidArgument(format!(
            "WAIC needs at least 2 posterior draws, got {s}"
        )));
    }
    let n = log_lik[0].len();
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    for (d, row) in log_lik.iter().enumerate() {
        if row.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "draw {d} scores {} observations, draw 0 scores {n}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("log-likelihood in draw {d}")));
        }
    }
    let ln_s = (s as f64).ln();
    let mut col = vec![0.0; s];
    let mut total = 0.0;
    for i in 0..n {
        for (d, row) in log_lik.iter().enumerate() {
            col[d] = row[i];
        }
        let lppd = logsumexp(&col) - ln_s;
        let mean = col.iter().sum::<f64>() / s as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (s - 1) as f64;
        total += lppd - var;
    }
    Ok(-2.0 * total)
}

/// Candidate grids of the default model-selection sweep.
pub const DEFAULT_BASIS_GRID: [usize; 3] = [8, 10, 12];
pub const DEFAULT_WIDTH_GRID: [usize; 3] = [5, 8, 10];

/// One row of the model-selection table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelChoice {
    pub basis_size: usize,
    pub hidden_width: usize,
    pub num_params: usize,
    pub waic: f64,
}

/// Outcome of a model-selection sweep: the winning fit and the full
/// score table in sweep order.
#[derive(Debug)]
pub struct ModelSelection {
    pub draws: CounterfactualDraws,
    pub basis_size: usize,
    pub hidden_width: usize,
    pub table: Vec<ModelChoice>,
}

/// `candidate` strictly improves on `best`: lower WAIC, or equal WAIC
/// with fewer parameters.
fn improves(candidate: (f64, usize), best: (f64, usize)) -> bool {
    candidate.0 < best.0 || (candidate.0 == best.0 && candidate.1 < best.1)
}

/// Fits every (basis size, hidden width) pair in the grids and keeps
/// the fit with the lowest WAIC, ties broken toward fewer parameters.
/// Candidates run sequentially since each fit already parallelizes
/// over score configurations.
pub fn select_model(
    data: &Dataset,
    scores: ScoreSource<'_>,
    base: &EstimateConfig,
    basis_sizes: &[usize],
    hidden_widths: &[usize],
) -> Result<ModelSelection> {
    if basis_sizes.is_empty() || hidden_widths.is_empty() {
        return Err(Error::InvalidArgument(
            "model selection needs at least one candidate".into(),
        ));
    }
    let mut table = Vec::with_capacity(basis_sizes.len() * hidden_widths.len());
    let mut best: Option<(ModelChoice, CounterfactualDraws)> = None;
    for &k in basis_sizes {
        for &v in hidden_widths {
            let mut config = base.clone();
            config.basis_size = k;
            config.hidden = vec![v];
            config.keep_log_densities = true;
            let draws = estimate(data, scores, &config)?;
            let lds = draws
                .log_densities()
                .expect("log densities were requested");
            let score = waic(lds)?;
            let num_params = NetworkArchitecture::new(
                1 + scores.score_dim(data.covariate_dim()),
                vec![v],
                k,
            )?
            .num_params();
            let choice = ModelChoice {
                basis_size: k,
                hidden_width: v,
                num_params,
                waic: score,
            };
            let take = match &best {
                Some((incumbent, _)) => {
                    improves((score, num_params), (incumbent.waic, incumbent.num_params))
                }
                None => true,
            };
            if take {
                best = Some((choice.clone(), draws));
            }
            table.push(choice);
        }
    }
    let (winner, draws) = best.expect("at least one candidate was fitted");
    Ok(ModelSelection {
        draws,
        basis_size: winner.basis_size,
        hidden_width: winner.hidden_width,
        table,
    })
}
