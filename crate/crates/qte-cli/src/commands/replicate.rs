//! `qte replicate`: a seeded simulate-fit study. Each replicate draws
//! its own dataset, runs the full analysis, and contributes quantile
//! effect estimates; aggregation compares them against the Monte Carlo
//! ground truth and the bundled benchmark table.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use qte::data::{write_truth_density, write_truth_qte};
use qte::metrics::{ise, GridFunction};
use qte::rng::{derive_seed, stream_rng};
use qte::simulate::{
    generate_replicate, true_marginals_on, Design, TrueMarginals, ORACLE_MIN_MC,
};
use rayon::prelude::*;

use super::aggregate::{
    reference_comparison, write_aab_csv, write_metrics_csv, write_rmse_csv, Aggregate,
};
use super::fit::{resolve_fit_settings, run_fit, CommonFitArgs, FitSettings};
use super::{prepare_out_dir, write_text, IGNORABILITY_NOTE, TRUTH_STREAM};
use crate::config::{read_config_file, Manifest, Resolver};
use crate::errors::{Classify, CliError, CliResult};

#[derive(clap::Args)]
pub struct ReplicateArgs {
    /// Data-generating design (1-4)
    #[arg(long)]
    design: Option<u8>,
    /// Confounders entering the treatment assignment of design 1 (0-5)
    #[arg(long)]
    confounders: Option<usize>,
    /// Observations per replicate
    #[arg(long)]
    n: Option<usize>,
    /// Number of replicates
    #[arg(long)]
    reps: Option<u64>,
    /// Master seed: replicate r draws data from stream r and fits with
    /// a seed derived from (seed, r)
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo draws behind the ground-truth marginals
    #[arg(long)]
    n_mc: Option<usize>,
    /// Worker threads for the replicate loop (0 = all cores)
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    settings: CommonFitArgs,
    /// key=value file supplying defaults for any of the above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

struct RepResult {
    deltas: Vec<f64>,
    ise: [f64; 2],
    max_divergence: f64,
}

/// Fitted posterior-mean density carried onto the truth grid by linear
/// interpolation; the mixture density is exactly zero outside its own
/// support, so points beyond the fitted range contribute zero.
fn fitted_pdf_on(summary: &qte::counterfactual::Summary, grid: &[f64], arm: usize) -> Vec<f64> {
    let ys: Vec<f64> = summary.curve.iter().map(|p| p.y).collect();
    let fs: Vec<f64> = summary.curve.iter().map(|p| p.pdf[arm].mean).collect();
    grid.iter()
        .map(|&g| {
            if g < ys[0] || g > ys[ys.len() - 1] {
                return 0.0;
            }
            let hi = ys.partition_point(|&y| y < g).max(1).min(ys.len() - 1);
            let lo = hi - 1;
            let span = ys[hi] - ys[lo];
            let w = if span > 0.0 { (g - ys[lo]) / span } else { 0.0 };
            fs[lo] + w * (fs[hi] - fs[lo])
        })
        .collect()
}

fn run_replicate(
    design: Design,
    n: usize,
    seed: u64,
    rep: u64,
    settings: &FitSettings,
    truth: &TrueMarginals,
) -> anyhow::Result<RepResult> {
    let data = generate_replicate(design, n, seed, rep)
        .and_then(|d| d.to_dataset())
        .context("generating data")?;
    let fit = run_fit(&data, settings, derive_seed(seed, rep)).context("fitting")?;
    let deltas = fit
        .summary
        .quantiles
        .iter()
        .map(|q| q.delta.mean)
        .collect();
    let mut ise_by_arm = [0.0; 2];
    for arm in 0..2 {
        let fitted = GridFunction::new(
            truth.grid.clone(),
            fitted_pdf_on(&fit.summary, &truth.grid, arm),
        )?;
        let true_pdf = GridFunction::new(truth.grid.clone(), truth.pdf[arm].clone())?;
        ise_by_arm[arm] = ise(&fitted, &true_pdf)?;
    }
    let max_divergence = fit
        .selection
        .draws
        .divergence_rates()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    Ok(RepResult {
        deltas,
        ise: ise_by_arm,
        max_divergence,
    })
}

fn write_ise_csv(path: &std::path::Path, rows: &[(u64, [f64; 2])]) -> CliResult<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .or_runtime()?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "replicate,arm,ise")?;
        for (rep, by_arm) in rows {
            for (arm, value) in by_arm.iter().enumerate() {
                writeln!(w, "{rep},{arm},{value}")?;
            }
        }
        w.flush()
    };
    body()
        .with_context(|| format!("writing {}", path.display()))
        .or_runtime()
}

pub fn run(args: ReplicateArgs) -> CliResult<()> {
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
    let workers = r.scalar("workers", args.workers, 0usize)?;
    let settings = resolve_fit_settings(&mut r, &args.settings)?;
    let resolved = r.finish()?;

    if n == 0 {
        return Err(CliError::validation(anyhow!("n must be at least 1")));
    }
    if reps == 0 {
        return Err(CliError::validation(anyhow!("reps must be at least 1")));
    }
    if n_mc < ORACLE_MIN_MC {
        return Err(CliError::validation(anyhow!(
            "n_mc must be at least {ORACLE_MIN_MC} for the ground-truth oracle"
        )));
    }

    prepare_out_dir(&args.out)?;

    let mut truth_rng = stream_rng(seed, TRUTH_STREAM);
    let truth = true_marginals_on(design, n_mc, settings.grid, &settings.taus, &mut truth_rng)
        .or_runtime()?;
    write_truth_density(args.out.join("truth_density.csv"), &truth).or_runtime()?;
    write_truth_qte(args.out.join("truth_qte.csv"), &truth).or_runtime()?;

    let reps_range: Vec<u64> = (1..=reps).collect();
    let worker = |rep: &u64| {
        (
            *rep,
            run_replicate(design, n, seed, *rep, &settings, &truth)
                .map_err(|e| format!("{e:#}")),
        )
    };
    // Results come back in replicate order either way; thread count
    // changes scheduling only, never any output byte.
    let results: Vec<(u64, Result<RepResult, String>)> = if workers == 0 {
        reps_range.par_iter().map(worker).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .context("building worker pool")
            .or_runtime()?;
        pool.install(|| reps_range.par_iter().map(worker).collect())
    };

    let mut replicates = Vec::new();
    let mut estimates = Vec::new();
    let mut ise_rows = Vec::new();
    let mut divergences = Vec::new();
    let mut failures: Vec<(u64, String)> = Vec::new();
    for (rep, outcome) in results {
        match outcome {
            Ok(res) => {
                replicates.push(rep);
                estimates.push(res.deltas);
                ise_rows.push((rep, res.ise));
                divergences.push(res.max_divergence);
            }
            Err(message) => {
                eprintln!("replicate {rep} failed: {message}");
                failures.push((rep, message));
            }
        }
    }

    let agg = if replicates.is_empty() {
        None
    } else {
        Some(Aggregate {
            method: settings.score.to_string(),
            taus: settings.taus.clone(),
            truth: truth.deltas(),
            replicates,
            estimates,
        })
    };

    let aggs: Vec<Aggregate> = agg.into_iter().collect();
    write_metrics_csv(&args.out.join("metrics.csv"), &aggs)?;
    write_rmse_csv(&args.out.join("rmse.csv"), &aggs)?;
    write_aab_csv(&args.out.join("aab.csv"), &aggs)?;
    write_ise_csv(&args.out.join("ise.csv"), &ise_rows)?;

    let mut report = Vec::new();
    report.push(format!(
        "replicate study: design {design_id}, n {n}, {} of {reps} replicates succeeded",
        aggs.first().map_or(0, |a| a.replicates.len())
    ));
    if let Some(agg) = aggs.first() {
        let (aab_value, aab_sd) = agg.aab_with_sd().or_runtime()?;
        let sd_text = aab_sd.map(|s| format!(" (sd {s:.4})")).unwrap_or_default();
        report.push(format!("aab: {aab_value:.4}{sd_text}"));
        for (tau, rmse) in agg.taus.iter().zip(agg.rmse_per_tau().or_runtime()?) {
            report.push(format!("rmse at tau {tau}: {rmse:.4}"));
        }
        let mean_ise: [f64; 2] = [0, 1].map(|arm| {
            ise_rows.iter().map(|(_, v)| v[arm]).sum::<f64>() / ise_rows.len() as f64
        });
        report.push(format!(
            "mean integrated squared density error: control {:.6}, treated {:.6}",
            mean_ise[0], mean_ise[1]
        ));
        let max_div = divergences.iter().copied().fold(0.0, f64::max);
        report.push(format!("max divergence rate across replicates: {max_div:.6}"));
        report.push(String::new());
        report.extend(reference_comparison(design_id, confounders, agg)?);
    }
    if !failures.is_empty() {
        report.push(String::new());
        for (rep, message) in &failures {
            report.push(format!("replicate {rep} failed: {message}"));
        }
    }
    report.push(String::new());
    report.push(IGNORABILITY_NOTE.to_string());
    let report_text = report.join("\n") + "\n";
    write_text(&args.out.join("report.txt"), &report_text)?;
    print!("{report_text}");

    let mut manifest = Manifest::new("replicate", &resolved);
    manifest.seed = Some(seed);
    manifest.outputs = vec![
        "truth_density.csv".into(),
        "truth_qte.csv".into(),
        "metrics.csv".into(),
        "rmse.csv".into(),
        "aab.csv".into(),
        "ise.csv".into(),
        "report.txt".into(),
        "manifest.json".into(),
    ];
    for (rep, message) in &failures {
        manifest.notes.push(format!("replicate {rep} failed: {message}"));
    }
    if aggs.is_empty() {
        manifest
            .notes
            .push("all replicates failed; aggregate tables hold headers only".into());
    }
    manifest.write(&args.out)?;

    if aggs.is_empty() {
        Err(CliError::runtime(anyhow!("all {reps} replicates failed")))
    } else if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::partial(anyhow!(
            "{} of {reps} replicates failed; aggregates cover the rest",
            failures.len()
        )))
    }
}
