//! Helpers shared by the CLI test suites: binary invocation, hand-built
//! manifests with binary feature files, and small measurement oracles kept
//! independent of the library under test.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_boxtransfer");

pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--output-dir")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("stdout is text")
}

pub fn run_err(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        !out.status.success(),
        "command {:?} unexpectedly succeeded\nstdout: {}",
        args,
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Raw feature file: FVEC magic, LE u32 count and dim, then f32 rows.
pub fn write_fvec(path: &Path, dim: usize, rows: &[Vec<f32>]) {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"FVEC");
    bytes.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    for row in rows {
        assert_eq!(row.len(), dim);
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).unwrap();
}

pub struct ToyRecord {
    pub id: String,
    pub class: &'static str,
    pub object: [f64; 4],
    pub head: [f64; 4],
    pub body: [f64; 4],
    pub full_feature: Vec<f32>,
    pub object_feature: Vec<f32>,
}

/// Two well-separated classes with fixed per-class boxes. Class `a` lives on
/// feature axis 0, class `b` on axis 1; the per-record wiggle on the last
/// axes keeps vectors distinct without moving them between classes.
pub fn toy_records(split: &str, count: usize) -> Vec<ToyRecord> {
    (0..count)
        .map(|i| {
            let wiggle = 0.01 * i as f32;
            let (class, axis) = if i % 2 == 0 { ("a", 0) } else { ("b", 1) };
            let mut full = vec![0.0f32; 4];
            full[axis] = 1.0;
            full[2] = 0.2 + wiggle;
            let mut object = vec![0.0f32; 4];
            object[axis] = 0.9;
            object[3] = 0.3 + wiggle;
            let (obj, head, body) = if class == "a" {
                (
                    [10.0, 10.0, 40.0, 40.0],
                    [15.0, 15.0, 10.0, 10.0],
                    [12.0, 30.0, 30.0, 15.0],
                )
            } else {
                (
                    [60.0, 60.0, 50.0, 30.0],
                    [95.0, 65.0, 10.0, 10.0],
                    [62.0, 70.0, 40.0, 15.0],
                )
            };
            ToyRecord {
                id: format!("{split}-{i:02}"),
                class,
                object: obj,
                head,
                body,
                full_feature: full,
                object_feature: object,
            }
        })
        .collect()
}

/// Write a manifest plus its two stage feature files; returns the manifest path.
pub fn write_toy_manifest(dir: &Path, name: &str, records: &[ToyRecord]) -> PathBuf {
    let full_file = format!("{name}-full.fvec");
    let object_file = format!("{name}-object.fvec");
    write_fvec(
        &dir.join(&full_file),
        4,
        &records.iter().map(|r| r.full_feature.clone()).collect::<Vec<_>>(),
    );
    write_fvec(
        &dir.join(&object_file),
        4,
        &records.iter().map(|r| r.object_feature.clone()).collect::<Vec<_>>(),
    );
    let mut lines = String::new();
    for (row, r) in records.iter().enumerate() {
        let record = serde_json::json!({
            "id": r.id,
            "width": 128.0,
            "height": 128.0,
            "class": r.class,
            "object_box": r.object,
            "parts": {"head": r.head, "body": r.body},
            "features": {
                "full": {"file": full_file, "row": row},
                "object": {"file": object_file, "row": row},
            },
        });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    let path = dir.join(format!("{name}-manifest.jsonl"));
    std::fs::write(&path, lines).unwrap();
    path
}

/// Intersection-over-union, written out directly so CLI outputs are checked
/// against arithmetic that shares nothing with the library.
pub fn iou_oracle(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// Parse one field of every line of a JSONL file.
pub fn jsonl(path: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("valid JSON line"))
        .collect()
}

pub fn box_of(value: &serde_json::Value) -> [f64; 4] {
    let a = value.as_array().expect("box array");
    [
        a[0].as_f64().unwrap(),
        a[1].as_f64().unwrap(),
        a[2].as_f64().unwrap(),
        a[3].as_f64().unwrap(),
    ]
}

/// Mean IoU of localization results against manifest ground truth.
pub fn mean_object_iou(manifest: &Path, localizations: &Path) -> f64 {
    let truth: std::collections::BTreeMap<String, [f64; 4]> = jsonl(manifest)
        .into_iter()
        .map(|r| {
            (
                r["id"].as_str().unwrap().to_string(),
                box_of(&r["object_box"]),
            )
        })
        .collect();
    let locs = jsonl(localizations);
    assert!(!locs.is_empty());
    let mut total = 0.0;
    for l in &locs {
        let id = l["id"].as_str().unwrap();
        total += iou_oracle(box_of(&l["object_box"]), truth[id]);
    }
    total / locs.len() as f64
}
