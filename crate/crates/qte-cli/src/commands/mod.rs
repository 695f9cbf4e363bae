//! The four subcommands: simulate, fit, replicate, report.

pub mod aggregate;
pub mod fit;
pub mod replicate;
pub mod report;
pub mod simulate;

use std::path::Path;

use anyhow::Context;

use crate::errors::{Classify, CliResult};

/// Stream index reserved for the ground-truth oracle, far above any
/// replicate index, so truth never shares random numbers with the
/// datasets it judges.
pub const TRUTH_STREAM: u64 = 1 << 32;

/// Assumption statement attached to every analysis output.
pub const IGNORABILITY_NOTE: &str = "note: estimates assume treatment assignment is \
ignorable given the recorded covariates (no unmeasured confounding) and that every unit \
had positive probability of either arm; neither assumption can be verified from the \
observed data.";

pub(crate) fn prepare_out_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
        .or_validation()
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .or_runtime()
}
