//! `qte fit`: counterfactual distributions and quantile effects for
//! one dataset, with information-criterion model selection.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, Context};
use qte::counterfactual::{default_taus, summarize, EstimateConfig, ScoreSource, Summary};
use qte::data::{write_density_table, write_propensity_matrix, write_qte_table, Dataset};
use qte::metrics::{select_model, ModelSelection, DEFAULT_BASIS_GRID, DEFAULT_WIDTH_GRID};
use qte::network::GsmHyperParams;
use qte::propensity::{fit_propensity, PropensityConfig, PropensityDraws};
use qte::sampler::SamplerConfig;

use super::{prepare_out_dir, write_text, IGNORABILITY_NOTE};
use crate::config::{read_config_file, Manifest, Resolver};
use crate::errors::{Classify, CliError, CliResult};

/// What the outcome model conditions on besides the treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Score {
    /// Estimated propensity concatenated with the covariates.
    Double,
    /// Estimated propensity alone.
    PsOnly,
    /// Covariates alone; no propensity stage.
    XOnly,
}

impl Score {
    pub fn as_str(self) -> &'static str {
        match self {
            Score::Double => "double",
            Score::PsOnly => "ps-only",
            Score::XOnly => "x-only",
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Score {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double" => Ok(Score::Double),
            "ps-only" => Ok(Score::PsOnly),
            "x-only" => Ok(Score::XOnly),
            other => Err(format!(
                "unknown score {other:?}; expected double, ps-only, or x-only"
            )),
        }
    }
}

/// Propensity chain schedule shared by every score mode that fits one:
/// `PROPENSITY_KEPT` post-burn-in iterations are thinned down to the
/// requested number of retained draws.
const PROPENSITY_ITER: usize = 1000;
const PROPENSITY_BURNIN: usize = 500;
const PROPENSITY_KEPT: usize = PROPENSITY_ITER - PROPENSITY_BURNIN;

/// Flags shared by `fit` and `replicate`. Each has a config-file key of
/// the same name (underscores instead of dashes).
#[derive(clap::Args)]
pub struct CommonFitArgs {
    /// Balancing-score mode
    #[arg(long, value_enum)]
    score: Option<Score>,
    /// Retained propensity draws (must divide 500)
    #[arg(long)]
    n_pi: Option<usize>,
    /// Comma-separated mixture sizes to sweep
    #[arg(long)]
    basis_grid: Option<String>,
    /// Comma-separated hidden widths to sweep
    #[arg(long)]
    width_grid: Option<String>,
    /// Outcome chain length including burn-in
    #[arg(long)]
    n_iter: Option<usize>,
    /// Outcome chain burn-in
    #[arg(long)]
    burnin: Option<usize>,
    /// Keep every thin-th post-burn-in iteration
    #[arg(long)]
    thin: Option<usize>,
    /// Acceptance statistic targeted by step-size adaptation
    #[arg(long)]
    target_accept: Option<f64>,
    /// Cap on trajectory doublings per draw
    #[arg(long)]
    max_depth: Option<usize>,
    /// Evaluation grid size for the density tables
    #[arg(long)]
    grid: Option<usize>,
    /// Comma-separated quantile levels
    #[arg(long)]
    taus: Option<String>,
    /// Credible-interval level
    #[arg(long)]
    ci: Option<f64>,
    /// Outcome margin: "auto" or a non-negative number
    #[arg(long)]
    margin: Option<String>,
}

/// Fully resolved analysis settings.
pub struct FitSettings {
    pub score: Score,
    pub n_pi: usize,
    pub basis_grid: Vec<usize>,
    pub width_grid: Vec<usize>,
    pub sampler: SamplerConfig,
    pub grid: usize,
    pub taus: Vec<f64>,
    pub ci: f64,
    pub margin: Option<f64>,
}

pub fn resolve_fit_settings(r: &mut Resolver, a: &CommonFitArgs) -> CliResult<FitSettings> {
    let score = r.scalar("score", a.score, Score::Double)?;
    let n_pi = r.scalar("n_pi", a.n_pi, 5usize)?;
    if n_pi == 0 || PROPENSITY_KEPT % n_pi != 0 {
        return Err(CliError::validation(anyhow!(
            "n_pi must divide {PROPENSITY_KEPT} evenly, got {n_pi}"
        )));
    }
    let basis_grid = r.list_usize("basis_grid", a.basis_grid.clone(), &DEFAULT_BASIS_GRID)?;
    if basis_grid.iter().any(|&k| k < 2) {
        return Err(CliError::validation(anyhow!("basis sizes must be at least 2")));
    }
    let width_grid = r.list_usize("width_grid", a.width_grid.clone(), &DEFAULT_WIDTH_GRID)?;
    if width_grid.iter().any(|&v| v == 0) {
        return Err(CliError::validation(anyhow!("hidden widths must be at least 1")));
    }
    let sampler = SamplerConfig {
        n_iter: r.scalar("n_iter", a.n_iter, 3000usize)?,
        n_burnin: r.scalar("burnin", a.burnin, 1000usize)?,
        thin: r.scalar("thin", a.thin, 10usize)?,
        target_accept: r.scalar("target_accept", a.target_accept, 0.8f64)?,
        max_tree_depth: r.scalar("max_depth", a.max_depth, 10usize)?,
        seed: 0,
    };
    sampler.validate().or_validation()?;
    let grid = r.scalar("grid", a.grid, 200usize)?;
    if grid < 2 {
        return Err(CliError::validation(anyhow!("grid must be at least 2 points")));
    }
    let taus = r.list_f64("taus", a.taus.clone(), &default_taus())?;
    if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(CliError::validation(anyhow!(
            "quantile levels must lie strictly inside (0, 1)"
        )));
    }
    if taus.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::validation(anyhow!(
            "quantile levels must be strictly increasing"
        )));
    }
    let ci = r.scalar("ci", a.ci, 0.95f64)?;
    if !(ci > 0.0 && ci < 1.0) {
        return Err(CliError::validation(anyhow!(
            "ci must lie strictly inside (0, 1)"
        )));
    }
    let margin = r.margin(a.margin.clone())?;
    Ok(FitSettings {
        score,
        n_pi,
        basis_grid,
        width_grid,
        sampler,
        grid,
        taus,
        ci,
        margin,
    })
}

pub struct FitRun {
    pub propensity: Option<PropensityDraws>,
    pub selection: ModelSelection,
    pub summary: Summary,
}

/// The full analysis: optional propensity stage, model selection over
/// the basis/width grids, posterior summary. `fit_seed` drives every
/// random choice; propensity, outcome chains, and bootstrap weights
/// live on disjoint streams of it.
pub fn run_fit(data: &Dataset, s: &FitSettings, fit_seed: u64) -> qte::Result<FitRun> {
    let propensity = match s.score {
        Score::XOnly => None,
        Score::Double | Score::PsOnly => {
            let config = PropensityConfig {
                hidden: vec![10],
                sampler: SamplerConfig {
                    n_iter: PROPENSITY_ITER,
                    n_burnin: PROPENSITY_BURNIN,
                    thin: PROPENSITY_KEPT / s.n_pi,
                    seed: fit_seed,
                    ..SamplerConfig::default()
                },
                hyper: GsmHyperParams::default(),
            };
            Some(fit_propensity(data.x(), data.t(), &config)?)
        }
    };
    let source = match (s.score, propensity.as_ref()) {
        (Score::Double, Some(p)) => ScoreSource::Double(p),
        (Score::PsOnly, Some(p)) => ScoreSource::PropensityOnly(p),
        (Score::XOnly, _) => ScoreSource::CovariatesOnly,
        _ => unreachable!("propensity fitted whenever the score needs it"),
    };
    let base = EstimateConfig {
        basis_size: s.basis_grid[0],
        hidden: vec![s.width_grid[0]],
        sampler: SamplerConfig {
            seed: fit_seed,
            ..s.sampler.clone()
        },
        hyper: GsmHyperParams::default(),
        grid_size: s.grid,
        taus: s.taus.clone(),
        margin: s.margin,
        keep_log_densities: false,
    };
    let selection = select_model(data, source, &base, &s.basis_grid, &s.width_grid)?;
    let summary = summarize(&selection.draws, &s.taus, s.ci)?;
    Ok(FitRun {
        propensity,
        selection,
        summary,
    })
}

pub fn write_model_selection(
    path: &std::path::Path,
    selection: &ModelSelection,
) -> CliResult<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .or_runtime()?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "basis_size,hidden_width,num_params,waic,selected")?;
        for choice in &selection.table {
            let selected = u8::from(
                choice.basis_size == selection.basis_size
                    && choice.hidden_width == selection.hidden_width,
            );
            writeln!(
                w,
                "{},{},{},{},{selected}",
                choice.basis_size, choice.hidden_width, choice.num_params, choice.waic
            )?;
        }
        w.flush()
    };
    body()
        .with_context(|| format!("writing {}", path.display()))
        .or_runtime()
}

pub fn diagnostics_text(s: &FitSettings, fit: &FitRun) -> String {
    let draws = &fit.selection.draws;
    let mut lines = Vec::new();
    lines.push(format!("score: {}", s.score));
    lines.push(format!(
        "propensity draws: {}",
        fit.propensity.as_ref().map_or(0, PropensityDraws::num_draws)
    ));
    lines.push(format!("score configurations: {}", draws.num_configs()));
    lines.push(format!(
        "weight draws per configuration: {}",
        draws.draws_per_config()
    ));
    lines.push(format!(
        "total posterior draws: {}",
        draws.num_configs() * draws.draws_per_config()
    ));
    lines.push(format!("selected basis size: {}", fit.selection.basis_size));
    lines.push(format!(
        "selected hidden width: {}",
        fit.selection.hidden_width
    ));
    let fmt_list = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    lines.push(format!(
        "adapted step size by configuration: {}",
        fmt_list(draws.step_sizes())
    ));
    lines.push(format!(
        "post-burn-in divergence rate by configuration: {}",
        fmt_list(draws.divergence_rates())
    ));
    let max_div = draws.divergence_rates().iter().copied().fold(0.0, f64::max);
    lines.push(format!("max divergence rate: {max_div:.6}"));
    lines.push(IGNORABILITY_NOTE.to_string());
    lines.join("\n") + "\n"
}

#[derive(clap::Args)]
pub struct FitArgs {
    /// Input dataset: CSV with header y,t,x1,...,xd
    #[arg(long)]
    data: Option<String>,
    /// Seed for the whole fit
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    settings: CommonFitArgs,
    /// Also write the propensity draw matrix
    #[arg(long)]
    save_propensity: bool,
    /// key=value file supplying defaults for any of the above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: FitArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut r = Resolver::new(file);
    let data_path: String = r.required("data", args.data.clone())?;
    let seed = r.scalar("seed", args.seed, 0u64)?;
    let settings = resolve_fit_settings(&mut r, &args.settings)?;
    let save_propensity = r.switch("save_propensity", args.save_propensity)?;
    let resolved = r.finish()?;

    let data = Dataset::read_csv(&data_path)
        .map_err(|e| CliError::validation(anyhow!("{data_path}: {e}")))?;
    if !data.has_both_arms() {
        return Err(CliError::validation(anyhow!(
            "{data_path}: both treatment arms must be present"
        )));
    }

    prepare_out_dir(&args.out)?;
    let fit = run_fit(&data, &settings, seed).or_runtime()?;

    write_qte_table(args.out.join("qte.csv"), &fit.summary).or_runtime()?;
    write_density_table(args.out.join("density.csv"), &fit.summary).or_runtime()?;
    write_model_selection(&args.out.join("model_selection.csv"), &fit.selection)?;
    write_text(
        &args.out.join("diagnostics.txt"),
        &diagnostics_text(&settings, &fit),
    )?;

    let mut manifest = Manifest::new("fit", &resolved);
    manifest.seed = Some(seed);
    manifest.n_propensity_draws =
        Some(fit.propensity.as_ref().map_or(0, PropensityDraws::num_draws));
    manifest.n_weight_draws = Some(fit.selection.draws.draws_per_config());
    manifest.outputs = vec![
        "qte.csv".into(),
        "density.csv".into(),
        "model_selection.csv".into(),
        "diagnostics.txt".into(),
    ];
    if save_propensity {
        match &fit.propensity {
            Some(draws) => {
                write_propensity_matrix(args.out.join("propensity.csv"), draws).or_runtime()?;
                manifest.outputs.push("propensity.csv".into());
            }
            None => manifest
                .notes
                .push("save_propensity ignored: x-only fits no propensity model".into()),
        }
    }
    manifest.outputs.push("manifest.json".into());
    manifest.write(&args.out)
}
