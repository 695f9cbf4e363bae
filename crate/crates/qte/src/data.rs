//! Observational datasets and the CSV formats the tools exchange.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::counterfactual::Summary;
use crate::propensity::PropensityDraws;
use crate::sampler::ChainDraws;
use crate::simulate::TrueMarginals;
use crate::{Error, Result};

/// One observational study: outcome, binary treatment, covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    t: Vec<u8>,
    x: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(y: Vec<f64>, t: Vec<u8>, x: Vec<Vec<f64>>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        if y.len() != t.len() || y.len() != x.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} outcomes, {} treatments, {} covariate rows",
                y.len(),
                t.len(),
                x.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome {i}")));
        }
        if let Some(i) = t.iter().position(|&v| v > 1) {
            return Err(Error::InvalidArgument(format!(
                "treatment {i} is {}, expected 0 or 1",
                t[i]
            )));
        }
        let d = x[0].len();
        for (i, row) in x.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "covariate row {i} has width {}, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("covariate row {i}")));
            }
        }
        Ok(Self { y, t, x })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.x[0].len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn num_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    pub fn num_control(&self) -> usize {
        self.len() - self.num_treated()
    }

    pub fn has_both_arms(&self) -> bool {
        self.num_treated() > 0 && self.num_control() > 0
    }

    /// Reads the dataset format: header `y,t,x1..xd`, one subject
    /// per row. Malformed rows are reported with their line number.
    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let headers = rdr.headers()?.clone();
        check_dataset_header(&headers, path)?;
        let d = headers.len() - 2;

        let mut y = Vec::new();
        let mut t = Vec::new();
        let mut x = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record
                .position()
                .map(|p| p.line())
                .unwrap_or(y.len() as u64 + 2);
            let fail = |message: String| Error::ParseRecord {
                path: path.to_path_buf(),
                line,
                message,
            };
            if record.len() != headers.len() {
                return Err(fail(format!(
                    "{} fields, expected {}",
                    record.len(),
                    headers.len()
                )));
            }
            let yi: f64 = record[0]
                .trim()
                .parse()
                .map_err(|_| fail(format!("outcome `{}` is not a number", &record[0])))?;
            let ti: u8 = match record[1].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(fail(format!("treatment `{other}` is not 0 or 1"))),
            };
            let mut row = Vec::with_capacity(d);
            for k in 0..d {
                let v: f64 = record[k + 2].trim().parse().map_err(|_| {
                    fail(format!(
                        "covariate `{}` in column {} is not a number",
                        &record[k + 2],
                        &headers[k + 2]
                    ))
                })?;
                row.push(v);
            }
            if !yi.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(fail("non-finite value".into()));
            }
            y.push(yi);
            t.push(ti);
            x.push(row);
        }
        Self::new(y, t, x)
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        let mut header = vec!["y".to_string(), "t".to_string()];
        header.extend((1..=self.covariate_dim()).map(|k| format!("x{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![format_float(self.y[i]), self.t[i].to_string()];
            rec.extend(self.x[i].iter().map(|&v| format_float(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_dataset_header(headers: &csv::StringRecord, path: &Path) -> Result<()> {
    let fail = |message: String| Error::ParseRecord {
        path: path.to_path_buf(),
        line: 1,
        message,
    };
    if headers.len() < 2 || &headers[0] != "y" || &headers[1] != "t" {
        return Err(fail("header must start with `y,t`".into()));
    }
    for (k, name) in headers.iter().skip(2).enumerate() {
        let want = format!("x{}", k + 1);
        if name != want {
            return Err(fail(format!("column {} named `{name}`, expected `{want}`", k + 3)));
        }
    }
    Ok(())
}

/// Shortest round-trip decimal form.
fn format_float(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains(['.', 'e', 'n', 'i']) {
        s.push_str(".0");
    }
    s
}

/// Writes propensity draws as an n-row matrix, one column per draw
/// (`pi1..piN`), the layout consumed by [`read_propensity_matrix`].
pub fn write_propensity_matrix<P: AsRef<Path>>(path: P, draws: &PropensityDraws) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let header: Vec<String> = (1..=draws.num_draws()).map(|j| format!("pi{j}")).collect();
    w.write_record(&header)?;
    for i in 0..draws.num_obs() {
        let rec: Vec<String> = (0..draws.num_draws())
            .map(|j| format_float(draws.draw(j)[i]))
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the quantile-effect table of a fit summary, one row per
/// level: `tau,qte_mean,ci_lo,ci_hi`.
pub fn write_qte_table<P: AsRef<Path>>(path: P, summary: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["tau", "qte_mean", "ci_lo", "ci_hi"])?;
    for q in &summary.quantiles {
        w.write_record([
            format_float(q.tau),
            format_float(q.delta.mean),
            format_float(q.delta.lo),
            format_float(q.delta.hi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes both arms' marginal density bands on the evaluation grid:
/// `grid_y,f0,f0_lo,f0_hi,f1,f1_lo,f1_hi`.
pub fn write_density_table<P: AsRef<Path>>(path: P, summary: &Summary) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["grid_y", "f0", "f0_lo", "f0_hi", "f1", "f1_lo", "f1_hi"])?;
    for p in &summary.curve {
        w.write_record([
            format_float(p.y),
            format_float(p.pdf[0].mean),
            format_float(p.pdf[0].lo),
            format_float(p.pdf[0].hi),
            format_float(p.pdf[1].mean),
            format_float(p.pdf[1].lo),
            format_float(p.pdf[1].hi),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes ground-truth marginal curves on the oracle grid:
/// `y,f0,cdf0,f1,cdf1`.
pub fn write_truth_density<P: AsRef<Path>>(path: P, truth: &TrueMarginals) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["y", "f0", "cdf0", "f1", "cdf1"])?;
    for (i, &y) in truth.grid.iter().enumerate() {
        w.write_record([
            format_float(y),
            format_float(truth.pdf[0][i]),
            format_float(truth.cdf[0][i]),
            format_float(truth.pdf[1][i]),
            format_float(truth.cdf[1][i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the ground-truth quantile table: `tau,q0,q1,delta`.
pub fn write_truth_qte<P: AsRef<Path>>(path: P, truth: &TrueMarginals) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["tau", "q0", "q1", "delta"])?;
    for (i, &tau) in truth.taus.iter().enumerate() {
        w.write_record([
            format_float(tau),
            format_float(truth.quantiles[0][i]),
            format_float(truth.quantiles[1][i]),
            format_float(truth.delta(i)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Dumps retained chain draws as columnar text: `#` comment lines
/// describe the layout, then one whitespace-separated record per
/// draw holding its diagnostics, the flattened network weights, the
/// per-layer precisions, and the per-unit local precisions.
pub fn write_chain_dump<P: AsRef<Path>>(path: P, chain: &ChainDraws) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# one record per retained draw")?;
    writeln!(
        w,
        "# columns: draw step_size accept_stat depth divergent energy_error n_leapfrog \
         weights.. kappa_per_layer.. omega_per_unit.."
    )?;
    if let (Some(weights), Some(prec)) = (chain.weights.first(), chain.precisions.first()) {
        let units: usize = (0..prec.num_layers()).map(|l| prec.num_units(l)).sum();
        writeln!(
            w,
            "# {} weights, {} layers, {} units",
            weights.num_params(),
            prec.num_layers(),
            units
        )?;
    }
    for (d, ((weights, prec), diag)) in chain
        .weights
        .iter()
        .zip(&chain.precisions)
        .zip(&chain.diagnostics)
        .enumerate()
    {
        write!(
            w,
            "{d} {} {} {} {} {} {}",
            format_float(diag.step_size),
            format_float(diag.stats.accept_stat),
            diag.stats.depth,
            u8::from(diag.stats.divergent),
            format_float(diag.stats.energy_error),
            diag.stats.n_leapfrog
        )?;
        for &v in weights.as_flat() {
            write!(w, " {}", format_float(v))?;
        }
        for l in 0..prec.num_layers() {
            write!(w, " {}", format_float(prec.kappa(l)))?;
        }
        for l in 0..prec.num_layers() {
            for j in 0..prec.num_units(l) {
                write!(w, " {}", format_float(prec.omega(l, j)))?;
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a propensity matrix written by [`write_propensity_matrix`].
/// The fitted networks are not persisted, so the result supports only
/// in-sample use.
pub fn read_propensity_matrix<P: AsRef<Path>>(path: P) -> Result<PropensityDraws> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let num_draws = rdr.headers()?.len();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); num_draws];
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != num_draws {
            return Err(Error::ParseRecord {
                path: path.to_path_buf(),
                line,
                message: format!("{} fields, expected {num_draws}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::ParseRecord {
                path: path.to_path_buf(),
                line,
                message: format!("propensity `{field}` is not a number"),
            })?;
            rows[j].push(v);
        }
    }
    PropensityDraws::from_rows(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn toy() -> Dataset {
        Dataset::new(
            vec![1.5, -0.25, 3.0],
            vec![1, 0, 1],
            vec![vec![0.1, -2.0], vec![0.0, 0.5], vec![1.25, 1e-9]],
        )
        .unwrap()
    }

    #[test]
    fn dataset_validates_shapes_and_values() {
        assert!(Dataset::new(vec![], vec![], vec![]).is_err());
        assert!(Dataset::new(vec![1.0], vec![0, 1], vec![vec![]]).is_err());
        assert!(Dataset::new(vec![f64::NAN], vec![0], vec![vec![]]).is_err());
        assert!(Dataset::new(vec![1.0], vec![2], vec![vec![]]).is_err());
        let ragged = Dataset::new(vec![1.0, 2.0], vec![0, 1], vec![vec![1.0], vec![1.0, 2.0]]);
        assert!(ragged.is_err());
        let ds = toy();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.covariate_dim(), 2);
        assert_eq!(ds.num_treated(), 2);
        assert_eq!(ds.num_control(), 1);
        assert!(ds.has_both_arms());
    }

    #[test]
    fn dataset_round_trips_through_csv() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let ds = toy();
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn bad_rows_are_reported_with_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "y,t,x1\n1.0,1,0.5\n2.0,yes,0.1\n").unwrap();
        match Dataset::read_csv(&path).unwrap_err() {
            Error::ParseRecord { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("yes"), "{message}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn header_deviations_are_rejected() {
        let dir = tempdir().unwrap();
        for (name, content) in [
            ("a.csv", "t,y,x1\n1,1.0,0.5\n"),
            ("b.csv", "y,t,z1\n1.0,1,0.5\n"),
            ("c.csv", "y,t,x2\n1.0,1,0.5\n"),
        ] {
            let path = dir.path().join(name);
            std::fs::write(&path, content).unwrap();
            let err = Dataset::read_csv(&path).unwrap_err();
            assert!(matches!(err, Error::ParseRecord { line: 1, .. }), "{name}");
        }
    }

    #[test]
    fn covariate_free_datasets_work() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bare.csv");
        let ds = Dataset::new(vec![1.0, 2.0], vec![0, 1], vec![vec![], vec![]]).unwrap();
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(back.covariate_dim(), 0);
        assert_eq!(ds, back);
    }

    #[test]
    fn propensity_matrix_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pi.csv");
        let draws =
            PropensityDraws::from_rows(vec![vec![0.25, 0.5, 0.75], vec![0.3, 0.6, 0.9]]).unwrap();
        write_propensity_matrix(&path, &draws).unwrap();
        let back = read_propensity_matrix(&path).unwrap();
        assert_eq!(back.num_draws(), 2);
        assert_eq!(back.num_obs(), 3);
        for j in 0..2 {
            assert_eq!(draws.draw(j), back.draw(j));
        }
    }

    #[test]
    fn propensity_matrix_rejects_invalid_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pi.csv");
        std::fs::write(&path, "pi1\n0.5\n1.5\n").unwrap();
        assert!(matches!(
            read_propensity_matrix(&path).unwrap_err(),
            Error::PropensityOutOfRange(_)
        ));
    }

    #[test]
    fn summary_tables_have_the_documented_columns() {
        use crate::counterfactual::{CurvePoint, QuantileSummary, SummaryStat};
        let s = |m: f64| SummaryStat {
            mean: m,
            lo: m - 0.1,
            hi: m + 0.1,
        };
        let summary = Summary {
            ci_level: 0.95,
            quantiles: vec![
                QuantileSummary {
                    tau: 0.25,
                    q0: s(1.0),
                    q1: s(1.5),
                    delta: s(0.5),
                },
                QuantileSummary {
                    tau: 0.5,
                    q0: s(2.0),
                    q1: s(2.25),
                    delta: s(0.25),
                },
            ],
            curve: vec![CurvePoint {
                y: 0.75,
                pdf: [s(0.4), s(0.6)],
                cdf: [s(0.2), s(0.3)],
            }],
        };
        let dir = tempdir().unwrap();
        let qte = dir.path().join("qte.csv");
        write_qte_table(&qte, &summary).unwrap();
        let text = std::fs::read_to_string(&qte).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tau,qte_mean,ci_lo,ci_hi"));
        assert_eq!(lines.next(), Some("0.25,0.5,0.4,0.6"));
        assert_eq!(lines.next(), Some("0.5,0.25,0.15,0.35"));
        assert_eq!(lines.next(), None);

        let dens = dir.path().join("density.csv");
        write_density_table(&dens, &summary).unwrap();
        let text = std::fs::read_to_string(&dens).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("grid_y,f0,f0_lo,f0_hi,f1,f1_lo,f1_hi"));
        assert_eq!(
            lines.next(),
            Some("0.75,0.4,0.30000000000000004,0.5,0.6,0.5,0.7")
        );
        assert_eq!(lines.next(), None);
    }

    #[test]
    fn truth_tables_round_trip_the_oracle() {
        use crate::simulate::TrueMarginals;
        let truth = TrueMarginals {
            grid: vec![0.0, 0.5, 1.0],
            pdf: [vec![1.0, 0.8, 0.2], vec![0.5, 1.0, 0.5]],
            cdf: [vec![0.0, 0.45, 1.0], vec![0.0, 0.375, 1.0]],
            taus: vec![0.5],
            quantiles: [vec![0.55], vec![0.6]],
        };
        let dir = tempdir().unwrap();
        let dens = dir.path().join("truth_density.csv");
        write_truth_density(&dens, &truth).unwrap();
        let text = std::fs::read_to_string(&dens).unwrap();
        assert_eq!(text.lines().next(), Some("y,f0,cdf0,f1,cdf1"));
        assert_eq!(text.lines().count(), 4);

        let qte = dir.path().join("truth_qte.csv");
        write_truth_qte(&qte, &truth).unwrap();
        let text = std::fs::read_to_string(&qte).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tau,q0,q1,delta"));
        // delta is recomputed from the stored quantiles.
        assert_eq!(lines.next(), Some("0.5,0.55,0.6,0.04999999999999993"));
    }

    #[test]
    fn chain_dump_has_one_record_per_draw() {
        use crate::network::{NetworkArchitecture, NetworkWeights, PrecisionState};
        use crate::sampler::{ChainDraws, DrawDiagnostics, DrawStats};
        let arch = NetworkArchitecture::new(2, vec![3], 4).unwrap();
        let draw = |energy: f64| DrawDiagnostics {
            stats: DrawStats {
                accept_stat: 0.9,
                depth: 3,
                divergent: energy > 0.5,
                energy_error: energy,
                n_leapfrog: 7,
            },
            step_size: 0.125,
        };
        let chain = ChainDraws {
            weights: vec![NetworkWeights::zeros(&arch); 2],
            precisions: vec![PrecisionState::ones(&arch); 2],
            diagnostics: vec![draw(0.1), draw(0.9)],
            post_burnin_divergences: 1,
            post_burnin_iterations: 2,
            step_size: 0.125,
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("chain.txt");
        write_chain_dump(&path, &chain).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let (comments, records): (Vec<&str>, Vec<&str>) =
            text.lines().partition(|l| l.starts_with('#'));
        assert_eq!(comments.len(), 3);
        assert_eq!(records.len(), 2);
        let params = NetworkWeights::zeros(&arch).num_params();
        let units = 3 + 4;
        let layers = 2;
        for (d, rec) in records.iter().enumerate() {
            let fields: Vec<&str> = rec.split_whitespace().collect();
            assert_eq!(fields.len(), 7 + params + layers + units);
            assert_eq!(fields[0], d.to_string());
            // Every numeric field parses back.
            for f in &fields[1..] {
                f.parse::<f64>().unwrap();
            }
        }
        let divergent: Vec<&str> = records.iter().map(|r| r.split_whitespace().nth(4).unwrap()).collect();
        assert_eq!(divergent, ["0", "1"]);
    }
}
