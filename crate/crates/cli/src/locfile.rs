//! Localization result files: one JSON record per line with the object box,
//! per-part boxes (null when no retrieved neighbor carried the part), the
//! termination reason, and the iteration count. Oracle-seeded records carry
//! `seeded: true`, zero iterations, and no reason.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use boxtransfer_core::evaluation::{RegionPredictions, OBJECT_REGION};
use serde::{Deserialize, Serialize};

use crate::manifest::to_box;

fn is_false(v: &bool) -> bool {
    !v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationRecord {
    pub id: String,
    pub object_box: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<BTreeMap<String, Option<[f64; 4]>>>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub seeded: bool,
}

pub fn read(path: &Path) -> Result<Vec<LocalizationRecord>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading localizations {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: LocalizationRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}: malformed record", path.display(), i + 1))?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("{}: no localization records", path.display());
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[LocalizationRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("localization records serialize"));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing localizations {}", path.display()))
}

/// Regroup for scoring: region name ("object" or a part name) to predicted
/// box per image.
pub fn to_predictions(records: &[LocalizationRecord]) -> RegionPredictions {
    let mut out = RegionPredictions::new();
    for r in records {
        let mut regions: BTreeMap<String, Option<_>> = BTreeMap::new();
        regions.insert(OBJECT_REGION.to_string(), Some(to_box(r.object_box)));
        if let Some(parts) = &r.parts {
            for (name, b) in parts {
                regions.insert(name.clone(), b.map(to_box));
            }
        }
        out.insert(r.id.clone(), regions);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_regroups() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loc.jsonl");
        let records = vec![
            LocalizationRecord {
                id: "t0".into(),
                object_box: [1.0, 2.0, 3.0, 4.0],
                parts: Some(BTreeMap::from([
                    ("head".to_string(), Some([1.5, 2.5, 1.0, 1.0])),
                    ("tail".to_string(), None),
                ])),
                iterations: 2,
                reason: Some("stability".into()),
                seeded: false,
            },
            LocalizationRecord {
                id: "t1".into(),
                object_box: [0.0, 0.0, 5.0, 5.0],
                parts: None,
                iterations: 0,
                reason: None,
                seeded: true,
            },
        ];
        write(&path, &records).unwrap();
        assert_eq!(read(&path).unwrap(), records);
        let predictions = to_predictions(&records);
        assert_eq!(predictions["t0"]["head"].unwrap().x, 1.5);
        assert_eq!(predictions["t0"]["tail"], None);
        assert!(predictions["t1"][OBJECT_REGION].is_some());
    }

    #[test]
    fn seeded_flag_is_omitted_when_false() {
        let record = LocalizationRecord {
            id: "a".into(),
            object_box: [0.0, 0.0, 1.0, 1.0],
            parts: None,
            iterations: 1,
            reason: Some("max-iters".into()),
            seeded: false,
        };
        let line = serde_json::to_string(&record).unwrap();
        assert!(!line.contains("seeded"));
    }
}
