//! `qte report`: re-aggregate a metrics table written by `replicate`
//! and compare against the bundled benchmark numbers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::anyhow;

use super::aggregate::{
    read_metrics_csv, reference_comparison, write_aab_csv, write_rmse_csv,
};
use super::{prepare_out_dir, write_text};
use crate::config::{read_config_file, Manifest, Resolver};
use crate::errors::{Classify, CliError, CliResult};

#[derive(clap::Args)]
pub struct ReportArgs {
    /// metrics.csv produced by the replicate command
    #[arg(long)]
    metrics: Option<String>,
    /// Design the metrics came from, enabling the reference comparison
    #[arg(long)]
    design: Option<u8>,
    /// Confounder count, required with --design 1
    #[arg(long)]
    confounders: Option<usize>,
    /// key=value file supplying defaults for any of the above
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: ReportArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let mut r = Resolver::new(file);
    let metrics_path: String = r.required("metrics", args.metrics.clone())?;
    let design = r.optional("design", args.design)?;
    let confounders = r.optional("confounders", args.confounders)?;
    let resolved = r.finish()?;

    if design == Some(1) && confounders.is_none() {
        return Err(CliError::validation(anyhow!(
            "design 1 has separate reference blocks per confounder count; pass --confounders"
        )));
    }

    let aggs = read_metrics_csv(Path::new(&metrics_path))?;
    prepare_out_dir(&args.out)?;
    write_rmse_csv(&args.out.join("rmse.csv"), &aggs)?;
    write_aab_csv(&args.out.join("aab.csv"), &aggs)?;

    let mut report = Vec::new();
    for agg in &aggs {
        report.push(format!(
            "method {}: {} replicates, {} levels",
            agg.method,
            agg.replicates.len(),
            agg.taus.len()
        ));
        let (aab_value, aab_sd) = agg.aab_with_sd().or_runtime()?;
        let sd_text = aab_sd.map(|s| format!(" (sd {s:.4})")).unwrap_or_default();
        report.push(format!("aab: {aab_value:.4}{sd_text}"));
        for (tau, rmse) in agg.taus.iter().zip(agg.rmse_per_tau().or_runtime()?) {
            report.push(format!("rmse at tau {tau}: {rmse:.4}"));
        }
        if let Some(design) = design {
            report.push(String::new());
            report.extend(reference_comparison(
                design,
                confounders.unwrap_or(0),
                agg,
            )?);
        }
        report.push(String::new());
    }
    let report_text = report.join("\n") + "\n";
    write_text(&args.out.join("report.txt"), &report_text)?;
    print!("{report_text}");

    let mut manifest = Manifest::new("report", &resolved);
    manifest.outputs = vec![
        "rmse.csv".into(),
        "aab.csv".into(),
        "report.txt".into(),
        "manifest.json".into(),
    ];
    manifest.write(&args.out)
}
