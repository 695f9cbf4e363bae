//! `qte simulate`: seeded benchmark datasets plus their ground truth.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::anyhow;
use qte::counterfactual::default_taus;
use qte::data::{write_truth_density, write_truth_qte};
use qte::rng::stream_rng;
use qte::simulate::{generate_replicate, true_marginals_on, Design, ORACLE_MIN_MC};

use super::{prepare_out_dir, TRUTH_STREAM};
use crate::config::{read_config_file, Manifest, Resolver};
use crate::errors::{Classify, CliError, CliResult};

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// Data-generating design (1-4)
    #[arg(long)]
    design: Option<u8>,
    /// Confounders entering the treatment assignment of design 1 (0-5)
    #[arg(long)]
    confounders: Option<usize>,
    /// Observations per dataset
    #[arg(long)]
    n: Option<usize>,
    /// Number of datasets
    #[arg(long)]
    reps: Option<u64>,
    /// Master seed; dataset r draws from stream r
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo draws behind the ground-truth marginals
    #[arg(long)]
    n_mc: Option<usize>,
    /// Grid size of the ground-truth density table
    #[arg(long)]
    grid: Option<usize>,
    /// Comma-separated quantile levels for the ground-truth table
    #[arg(long)]
    taus: Option<String>,
    /// Skip the ground-truth tables
    #[arg(long)]
    skip_truth: bool,
    /// key=value file supplying defaults for any of the above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: SimulateArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut r = Resolver::new(file);
    let design_id: u8 = r.required("design", args.design)?;
    let confounders = r.scalar("confounders", args.confounders, 0usize)?;
    let design = Design::from_id(design_id, confounders).or_validation()?;
    let n = r.scalar("n", args.n, 500usize)?;
    let reps = r.scalar("reps", args.reps, 1u64)?;
    let seed: u64 = r.required("seed", args.seed)?;
    let n_mc = r.scalar("n_mc", args.n_mc, 400_000usize)?;
    let grid = r.scalar("grid", args.grid, 200usize)?;
    let taus = r.list_f64("taus", args.taus.clone(), &default_taus())?;
    let skip_truth = r.switch("skip_truth", args.skip_truth)?;
    let resolved = r.finish()?;

    if n == 0 {
        return Err(CliError::validation(anyhow!("n must be at least 1")));
    }
    if reps == 0 {
        return Err(CliError::validation(anyhow!("reps must be at least 1")));
    }
    if !skip_truth && n_mc < ORACLE_MIN_MC {
        return Err(CliError::validation(anyhow!(
            "n_mc must be at least {ORACLE_MIN_MC} for the ground-truth oracle"
        )));
    }

    prepare_out_dir(&args.out)?;
    let mut manifest = Manifest::new("simulate", &resolved);
    manifest.seed = Some(seed);

    for rep in 1..=reps {
        let data = generate_replicate(design, n, seed, rep).or_runtime()?;
        let name = format!("data_{rep:03}.csv");
        data.to_dataset()
            .and_then(|d| d.write_csv(args.out.join(&name)))
            .or_runtime()?;
        manifest.outputs.push(name);
    }

    if !skip_truth {
        let mut rng = stream_rng(seed, TRUTH_STREAM);
        let truth = true_marginals_on(design, n_mc, grid, &taus, &mut rng).or_runtime()?;
        write_truth_density(args.out.join("truth_density.csv"), &truth).or_runtime()?;
        write_truth_qte(args.out.join("truth_qte.csv"), &truth).or_runtime()?;
        manifest.outputs.push("truth_density.csv".into());
        manifest.outputs.push("truth_qte.csv".into());
    }

    manifest.outputs.push("manifest.json".into());
    manifest.write(&args.out)
}
