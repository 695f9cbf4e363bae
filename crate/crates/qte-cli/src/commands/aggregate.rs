//! Replicate-level error tables and their aggregation, shared by
//! `replicate` (which builds them) and `report` (which re-reads them).

use std::io::{BufWriter, Write as _};
use std::path::Path;

use anyhow::{anyhow, bail, Context};
use qte::metrics::{aab, aab_any_levels, aab_per_replicate, rmse_tau, AAB_LEVELS};

use crate::errors::{Classify, CliError, CliResult};
use crate::reference::{reference_table, Metric};

/// Per-replicate quantile-effect estimates for one method against a
/// common truth. Rows of `estimates` follow `replicates`; columns
/// follow `taus`.
#[derive(Debug)]
pub struct Aggregate {
    pub method: String,
    pub taus: Vec<f64>,
    pub truth: Vec<f64>,
    pub replicates: Vec<u64>,
    pub estimates: Vec<Vec<f64>>,
}

impl Aggregate {
    pub fn rmse_per_tau(&self) -> anyhow::Result<Vec<f64>> {
        (0..self.taus.len())
            .map(|ti| {
                let column: Vec<f64> = self.estimates.iter().map(|row| row[ti]).collect();
                rmse_tau(&column, self.truth[ti]).map_err(Into::into)
            })
            .collect()
    }

    /// Average absolute bias and, with two or more replicates, the
    /// sample standard deviation of the per-replicate version.
    pub fn aab_with_sd(&self) -> anyhow::Result<(f64, Option<f64>)> {
        let value = if self.taus.len() == AAB_LEVELS {
            aab(&self.estimates, &self.truth)?
        } else {
            aab_any_levels(&self.estimates, &self.truth)?
        };
        let per = aab_per_replicate(&self.estimates, &self.truth)?;
        Ok((value, sample_sd(&per)))
    }
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Some((ss / (n - 1.0)).sqrt())
}

/// One row per (method, replicate, quantile level); `error` restates
/// `estimate - truth` so the file stands on its own.
pub fn write_metrics_csv(path: &Path, aggs: &[Aggregate]) -> CliResult<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .or_runtime()?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "method,replicate,tau,estimate,truth,error")?;
        for agg in aggs {
            for (rep, row) in agg.replicates.iter().zip(&agg.estimates) {
                for (ti, est) in row.iter().enumerate() {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        agg.method,
                        rep,
                        agg.taus[ti],
                        est,
                        agg.truth[ti],
                        est - agg.truth[ti]
                    )?;
                }
            }
        }
        w.flush()
    };
    body()
        .with_context(|| format!("writing {}", path.display()))
        .or_runtime()
}

pub fn write_rmse_csv(path: &Path, aggs: &[Aggregate]) -> CliResult<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .or_runtime()?;
    let mut w = BufWriter::new(file);
    let mut body = || -> anyhow::Result<()> {
        writeln!(w, "method,tau,rmse")?;
        for agg in aggs {
            for (tau, rmse) in agg.taus.iter().zip(agg.rmse_per_tau()?) {
                writeln!(w, "{},{tau},{rmse}", agg.method)?;
            }
        }
        w.flush()?;
        Ok(())
    };
    body()
        .with_context(|| format!("writing {}", path.display()))
        .or_runtime()
}

pub fn write_aab_csv(path: &Path, aggs: &[Aggregate]) -> CliResult<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("creating {}", path.display()))
        .or_runtime()?;
    let mut w = BufWriter::new(file);
    let mut body = || -> anyhow::Result<()> {
        writeln!(w, "method,aab,aab_sd")?;
        for agg in aggs {
            let (value, sd) = agg.aab_with_sd()?;
            let sd = sd.map(|s| s.to_string()).unwrap_or_default();
            writeln!(w, "{},{value},{sd}", agg.method)?;
        }
        w.flush()?;
        Ok(())
    };
    body()
        .with_context(|| format!("writing {}", path.display()))
        .or_runtime()
}

/// Parses a metrics table back into per-method aggregates, validating
/// that every replicate covers the same levels with the same truth.
pub fn read_metrics_csv(path: &Path) -> CliResult<Vec<Aggregate>> {
    let parse = || -> anyhow::Result<Vec<Aggregate>> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let headers = reader.headers()?.clone();
        let expected = ["method", "replicate", "tau", "estimate", "truth", "error"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            bail!("header {:?}, expected {:?}", got.join(","), expected.join(","));
        }

        // (method, replicate) -> rows in file order.
        let mut rows: Vec<(String, u64, f64, f64, f64)> = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let record = record?;
            let line = idx + 2;
            let field = |i: usize| -> anyhow::Result<&str> {
                record
                    .get(i)
                    .ok_or_else(|| anyhow!("line {line}: missing field {i}"))
            };
            let method = field(0)?.to_string();
            let rep: u64 = field(1)?
                .parse()
                .with_context(|| format!("line {line}: replicate"))?;
            let tau: f64 = field(2)?
                .parse()
                .with_context(|| format!("line {line}: tau"))?;
            let est: f64 = field(3)?
                .parse()
                .with_context(|| format!("line {line}: estimate"))?;
            let truth: f64 = field(4)?
                .parse()
                .with_context(|| format!("line {line}: truth"))?;
            let err: f64 = field(5)?
                .parse()
                .with_context(|| format!("line {line}: error"))?;
            if (err - (est - truth)).abs() > 1e-9 {
                bail!("line {line}: error column disagrees with estimate - truth");
            }
            rows.push((method, rep, tau, est, truth));
        }
        if rows.is_empty() {
            bail!("no data rows");
        }

        let mut methods: Vec<String> = Vec::new();
        for (m, ..) in &rows {
            if !methods.contains(m) {
                methods.push(m.clone());
            }
        }

        let mut aggs = Vec::new();
        for method in methods {
            let mut reps: Vec<u64> = Vec::new();
            for (m, r, ..) in &rows {
                if *m == method && !reps.contains(r) {
                    reps.push(*r);
                }
            }
            reps.sort_unstable();

            // Canonical level set from the first replicate.
            let first: Vec<(f64, f64)> = rows
                .iter()
                .filter(|(m, r, ..)| *m == method && *r == reps[0])
                .map(|&(_, _, tau, _, truth)| (tau, truth))
                .collect();
            let taus: Vec<f64> = first.iter().map(|&(tau, _)| tau).collect();
            if taus.windows(2).any(|w| w[0] >= w[1]) {
                bail!("method {method}: levels must be strictly increasing per replicate");
            }
            let truth: Vec<f64> = first.iter().map(|&(_, t)| t).collect();

            let mut estimates = Vec::with_capacity(reps.len());
            for &rep in &reps {
                let block: Vec<(f64, f64, f64)> = rows
                    .iter()
                    .filter(|(m, r, ..)| *m == method && *r == rep)
                    .map(|&(_, _, tau, est, tr)| (tau, est, tr))
                    .collect();
                if block.len() != taus.len() {
                    bail!(
                        "method {method} replicate {rep}: {} levels, expected {}",
                        block.len(),
                        taus.len()
                    );
                }
                let mut row = Vec::with_capacity(taus.len());
                for (ti, &(tau, est, tr)) in block.iter().enumerate() {
                    if (tau - taus[ti]).abs() > 1e-12 {
                        bail!("method {method} replicate {rep}: level {tau} out of order");
                    }
                    if (tr - truth[ti]).abs() > 1e-9 {
                        bail!("method {method} replicate {rep}: truth disagrees at level {tau}");
                    }
                    row.push(est);
                }
                estimates.push(row);
            }
            aggs.push(Aggregate {
                method,
                taus,
                truth,
                replicates: reps,
                estimates,
            });
        }
        Ok(aggs)
    };
    parse()
        .map_err(|e| CliError::validation(anyhow!("{}: {e:#}", path.display())))
}

/// Lines comparing this run's aggregate errors against the bundled
/// benchmark table for the same design and method.
pub fn reference_comparison(
    design: u8,
    confounders: usize,
    agg: &Aggregate,
) -> CliResult<Vec<String>> {
    let table = reference_table().or_runtime()?;
    let rows = crate::reference::lookup(&table, design, confounders, &agg.method);
    let mut lines = Vec::new();
    if design == 1 {
        lines.push(format!(
            "reference comparison (design {design}, {confounders} confounders, method {}):",
            agg.method
        ));
    } else {
        lines.push(format!(
            "reference comparison (design {design}, method {}):",
            agg.method
        ));
    }
    if rows.is_empty() {
        lines.push("  no reference entries for this design and method".into());
        return Ok(lines);
    }
    let (ours_aab, ours_sd) = agg.aab_with_sd().or_runtime()?;
    for row in &rows {
        match row.metric {
            Metric::Aab => {
                let ours_sd = ours_sd
                    .map(|s| format!(" (sd {s:.4})"))
                    .unwrap_or_default();
                let ref_sd = row
                    .sd
                    .map(|s| format!(" (sd {s})"))
                    .unwrap_or_default();
                lines.push(format!(
                    "  aab: ours {ours_aab:.4}{ours_sd}; reference {}{ref_sd}",
                    row.value
                ));
            }
            Metric::Rmse => {
                let tau = row.tau.expect("rmse reference rows carry a level");
                let Some(ti) = agg.taus.iter().position(|&t| (t - tau).abs() < 1e-9) else {
                    continue;
                };
                let ours = agg.rmse_per_tau().or_runtime()?[ti];
                lines.push(format!(
                    "  rmse at tau {tau}: ours {ours:.4}; reference {}",
                    row.value
                ));
            }
        }
    }
    Ok(lines)
}
