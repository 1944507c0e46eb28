//! Prediction files: one JSON record per line with the predicted class and
//! the top-scoring classes in descending score order.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub class: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub class: String,
    pub scores: Vec<ScoreEntry>,
}

pub fn read(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading predictions {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}: malformed record", path.display(), i + 1))?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("{}: no prediction records", path.display());
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("prediction records serialize"));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing predictions {}", path.display()))
}
