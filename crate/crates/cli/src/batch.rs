//! Per-record failure bookkeeping for batch commands. A failing record is
//! logged and the batch moves on; the error manifest is written even when
//! empty so a clean run is distinguishable from a missing one.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchError {
    pub id: String,
    /// What failed for the record: "object", "part:<name>", "feature", ...
    pub scope: String,
    pub error: String,
}

pub fn write_errors(output_dir: &Path, errors: &[BatchError]) -> Result<PathBuf> {
    let path = output_dir.join("errors.jsonl");
    let mut out = String::new();
    for e in errors {
        out.push_str(&serde_json::to_string(e).expect("batch errors serialize"));
        out.push('\n');
    }
    fs::write(&path, out).with_context(|| format!("writing error manifest {}", path.display()))?;
    Ok(path)
}

/// Enforce --fail-fast: with it, the first record failure aborts the run.
pub fn check_fail_fast(fail_fast: bool, errors: &[BatchError]) -> Result<()> {
    if fail_fast {
        if let Some(first) = errors.first() {
            bail!("record `{}` ({}): {}", first.id, first.scope, first.error);
        }
    }
    Ok(())
}

/// One summary line on stderr when anything failed.
pub fn note_errors(errors: &[BatchError], manifest: &Path) {
    if !errors.is_empty() {
        eprintln!("{} record(s) failed; see {}", errors.len(), manifest.display());
    }
}
