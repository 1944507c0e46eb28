//! Dataset manifests: one JSON record per line.
//!
//! Boxes are `[x, y, w, h]` arrays. Feature references name a stage
//! ("full", "object", "part:<name>") and point at a row of a binary
//! feature file or carry the vector inline.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use boxtransfer_core::geometry::{BoundingBox, ImageSize};
use boxtransfer_core::index::AnnotatedImage;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureRef {
    File { file: String, row: usize },
    Inline(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub width: f64,
    pub height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_box: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<BTreeMap<String, Option<[f64; 4]>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<BTreeMap<String, FeatureRef>>,
}

pub fn to_box(a: [f64; 4]) -> BoundingBox {
    BoundingBox::new(a[0], a[1], a[2], a[3])
}

pub fn from_box(b: BoundingBox) -> [f64; 4] {
    [b.x, b.y, b.w, b.h]
}

impl ManifestRecord {
    pub fn to_annotated(&self) -> AnnotatedImage {
        let mut rec = AnnotatedImage::new(&self.id, ImageSize::new(self.width, self.height));
        if let Some(class) = &self.class {
            rec = rec.with_class(class);
        }
        if let Some(b) = self.object_box {
            rec = rec.with_object_box(to_box(b));
        }
        if let Some(parts) = &self.parts {
            for (name, b) in parts {
                rec = rec.with_part(name, b.map(to_box));
            }
        }
        rec
    }
}

/// Parse a manifest; each returned record keeps its 1-based line number for
/// diagnostics. Duplicate ids are rejected here so the message can point at
/// both offending lines.
pub fn read(path: &Path) -> Result<Vec<(usize, ManifestRecord)>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let mut records = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {line_no}: malformed record", path.display()))?;
        if let Some(first) = seen.insert(record.id.clone(), line_no) {
            bail!(
                "{} line {line_no}: duplicate id `{}` (first defined at line {first})",
                path.display(),
                record.id
            );
        }
        records.push((line_no, record));
    }
    if records.is_empty() {
        bail!("{}: manifest holds no records", path.display());
    }
    Ok(records)
}

pub fn write(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing manifest {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut parts = BTreeMap::new();
        parts.insert("head".to_string(), Some([1.0, 2.0, 3.0, 4.0]));
        parts.insert("tail".to_string(), None);
        let records = vec![
            ManifestRecord {
                id: "a".into(),
                width: 100.0,
                height: 80.0,
                class: Some("wren".into()),
                object_box: Some([0.5, 1.5, 20.0, 30.0]),
                parts: Some(parts),
                features: Some(BTreeMap::from([(
                    "full".to_string(),
                    FeatureRef::Inline(vec![0.25, -1.0]),
                )])),
            },
            ManifestRecord {
                id: "b".into(),
                width: 64.0,
                height: 64.0,
                class: None,
                object_box: None,
                parts: None,
                features: Some(BTreeMap::from([(
                    "full".to_string(),
                    FeatureRef::File { file: "f.fvec".into(), row: 3 },
                )])),
            },
        ];
        write(&path, &records).unwrap();
        let back: Vec<ManifestRecord> = read(&path).unwrap().into_iter().map(|(_, r)| r).collect();
        assert_eq!(back, records);
    }

    #[test]
    fn names_duplicate_id_and_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        std::fs::write(
            &path,
            concat!(
                "{\"id\":\"x\",\"width\":10,\"height\":10}\n",
                "{\"id\":\"x\",\"width\":10,\"height\":10}\n"
            ),
        )
        .unwrap();
        let err = read(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate id `x`"), "{err}");
        assert!(err.contains("line 2") && err.contains("line 1"), "{err}");
    }

    #[test]
    fn reports_parse_failures_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"x\",\"width\":10,\"height\":10}\nnot json\n").unwrap();
        let err = format!("{:#}", read(&path).unwrap_err());
        assert!(err.contains("line 2"), "{err}");
    }
}
