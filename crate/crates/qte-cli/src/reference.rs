//! Benchmark reference results bundled with the binary.
//!
//! The table holds average absolute bias (mean and across-replicate
//! standard deviation) and per-level RMSE of the quantile effects
//! from a published 100-replicate benchmark of the four bundled
//! designs, for this tool's three score modes (`double`, `ps-only`,
//! `x-only`) and three external competitors (`dpm-ps`, `dpm-x`,
//! `ts`). Reports compare fresh replication runs against these rows.

use anyhow::{bail, Context, Result};

const REFERENCE_CSV: &str = include_str!("reference.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub design: u8,
    /// Only design 1 varies its confounder count.
    pub confounders: Option<usize>,
    pub method: String,
    pub metric: Metric,
    /// Quantile level for RMSE rows; absent for AAB rows.
    pub tau: Option<f64>,
    pub value: f64,
    /// Across-replicate standard deviation; AAB rows only.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Rmse,
    Aab,
}

/// Parses the bundled table. The format is fixed at compile time, so
/// any error here is a build defect, not user input.
pub fn reference_table() -> Result<Vec<ReferenceRow>> {
    let mut rows = Vec::new();
    let mut rdr = csv::Reader::from_reader(REFERENCE_CSV.as_bytes());
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |j: usize| record.get(j).unwrap_or("").trim();
        let opt = |j: usize| {
            let f = field(j);
            (!f.is_empty()).then(|| f.to_string())
        };
        let metric = match field(3) {
            "rmse" => Metric::Rmse,
            "aab" => Metric::Aab,
            other => bail!("row {i}: unknown metric `{other}`"),
        };
        rows.push(ReferenceRow {
            design: field(0).parse().with_context(|| format!("row {i} design"))?,
            confounders: opt(1)
                .map(|v| v.parse().with_context(|| format!("row {i} confounders")))
                .transpose()?,
            method: field(2).to_string(),
            metric,
            tau: opt(4)
                .map(|v| v.parse().with_context(|| format!("row {i} tau")))
                .transpose()?,
            value: field(5).parse().with_context(|| format!("row {i} value"))?,
            sd: opt(6)
                .map(|v| v.parse().with_context(|| format!("row {i} sd")))
                .transpose()?,
        });
    }
    Ok(rows)
}

/// Rows matching one benchmark setting; `confounders` is compared
/// only for design 1.
pub fn lookup(
    rows: &[ReferenceRow],
    design: u8,
    confounders: usize,
    method: &str,
) -> Vec<ReferenceRow> {
    rows.iter()
        .filter(|r| {
            r.design == design
                && r.method == method
                && (r.design != 1 || r.confounders == Some(confounders))
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_parses_and_has_known_entries() {
        let rows = reference_table().unwrap();
        // 5 design settings x 6 methods x 6 rows, minus the missing
        // design-2 competitor block.
        assert_eq!(rows.len(), 5 * 6 * 6 - 6);
        let d1 = lookup(&rows, 1, 0, "double");
        assert_eq!(d1.len(), 6);
        let aab = d1.iter().find(|r| r.metric == Metric::Aab).unwrap();
        assert_eq!(aab.value, 0.12);
        assert_eq!(aab.sd, Some(0.06));
        let median = d1
            .iter()
            .find(|r| r.metric == Metric::Rmse && r.tau == Some(0.5))
            .unwrap();
        assert_eq!(median.value, 0.21);
        let d1j2 = lookup(&rows, 1, 2, "double");
        let aab = d1j2.iter().find(|r| r.metric == Metric::Aab).unwrap();
        assert_eq!((aab.value, aab.sd), (0.17, Some(0.06)));
        assert!(lookup(&rows, 2, 0, "dpm-x").is_empty(), "missing block");
        let d4 = lookup(&rows, 4, 0, "ts");
        let tail = d4
            .iter()
            .find(|r| r.metric == Metric::Rmse && r.tau == Some(0.9))
            .unwrap();
        assert_eq!(tail.value, 0.17);
    }

    #[test]
    fn every_method_block_is_complete() {
        let rows = reference_table().unwrap();
        for (design, confounders) in [(1u8, 0usize), (1, 2), (2, 0), (3, 0), (4, 0)] {
            for method in ["double", "ps-only", "x-only", "dpm-ps", "dpm-x", "ts"] {
                let block = lookup(&rows, design, confounders, method);
                if design == 2 && method == "dpm-x" {
                    continue;
                }
                assert_eq!(block.len(), 6, "design {design} J={confounders} {method}");
                assert_eq!(
                    block.iter().filter(|r| r.metric == Metric::Aab).count(),
                    1
                );
                for r in &block {
                    assert!(r.value >= 0.0 && r.value < 1.0);
                    match r.metric {
                        Metric::Rmse => assert!(r.tau.is_some() && r.sd.is_none()),
                        Metric::Aab => assert!(r.tau.is_none() && r.sd.is_some()),
                    }
                }
            }
        }
    }
}
