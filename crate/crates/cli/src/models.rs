//! Model files: one JSON header line describing the model, then an FVEC
//! payload holding one f32 row per weight vector.
//!
//! Regressors store four rows per class (x, y, w, h targets) at the feature
//! dimension. Classifiers store one row per class at dimension + 1, the
//! trailing component being the bias. Weights survive a save/load cycle at
//! f32 precision; that is the file contract, not a library property.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use boxtransfer_core::recognition::{ClassifierModel, RegionLayout};
use boxtransfer_core::regression::RegressorModel;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegressorHeader {
    kind: String,
    dim: usize,
    lambda: f64,
    convention: String,
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifierHeader {
    kind: String,
    c: f64,
    layout: Vec<(String, usize)>,
    classes: Vec<String>,
}

#[derive(Deserialize)]
struct KindOnly {
    kind: String,
}

/// The `kind` field alone, so a wrong model type is reported as such instead
/// of as a parse failure on the other kind's fields.
fn peek_kind(path: &Path, header_line: &str, expected: &str) -> Result<()> {
    let peek: KindOnly = serde_json::from_str(header_line)
        .with_context(|| format!("{}: malformed model header", path.display()))?;
    if peek.kind != expected {
        bail!("{}: expected a {expected} model, found `{}`", path.display(), peek.kind);
    }
    Ok(())
}

fn write_model(path: &Path, header: &impl Serialize, payload: Vec<u8>) -> Result<()> {
    let mut bytes = serde_json::to_vec(header).expect("model headers serialize");
    bytes.push(b'\n');
    bytes.extend_from_slice(&payload);
    fs::write(path, bytes).with_context(|| format!("writing model {}", path.display()))
}

fn split_model(path: &Path) -> Result<(String, Vec<u8>)> {
    let bytes = fs::read(path).with_context(|| format!("reading model {}", path.display()))?;
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| anyhow!("{}: missing model header line", path.display()))?;
    let header = String::from_utf8(bytes[..newline].to_vec())
        .map_err(|_| anyhow!("{}: model header is not text", path.display()))?;
    Ok((header, bytes[newline + 1..].to_vec()))
}

pub fn write_regressor(path: &Path, model: &RegressorModel) -> Result<()> {
    let classes: Vec<String> = model.classes().map(str::to_string).collect();
    let header = RegressorHeader {
        kind: "regressor".to_string(),
        dim: model.dim(),
        lambda: model.lambda(),
        convention: model.convention().name().to_string(),
        classes: classes.clone(),
    };
    let mut rows = Vec::with_capacity(classes.len() * 4);
    for class in &classes {
        let per_class = model.weights_of(class).expect("listed class has weights");
        for w in per_class {
            rows.push(w.iter().map(|v| *v as f32).collect());
        }
    }
    write_model(path, &header, crate::fvec::encode_f32(model.dim(), &rows)?)
}

pub fn read_regressor(path: &Path) -> Result<RegressorModel> {
    let (header_line, payload) = split_model(path)?;
    peek_kind(path, &header_line, "regressor")?;
    let header: RegressorHeader = serde_json::from_str(&header_line)
        .with_context(|| format!("{}: malformed model header", path.display()))?;
    let (dim, rows) = crate::fvec::decode_f32(&payload, "regressor payload")?;
    if dim != header.dim || rows.len() != header.classes.len() * 4 {
        bail!("{}: payload shape disagrees with the header", path.display());
    }
    let mut weights = BTreeMap::new();
    for (i, class) in header.classes.iter().enumerate() {
        let take = |t: usize| -> Vec<f64> {
            rows[i * 4 + t].iter().map(|v| f64::from(*v)).collect()
        };
        weights.insert(class.clone(), [take(0), take(1), take(2), take(3)]);
    }
    RegressorModel::from_parts(header.dim, header.lambda, header.convention.parse()?, weights)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

pub fn write_classifier(path: &Path, model: &ClassifierModel) -> Result<()> {
    let layout: Vec<(String, usize)> =
        model.layout().regions().iter().map(|(n, d)| (n.clone(), *d)).collect();
    let header = ClassifierHeader {
        kind: "classifier".to_string(),
        c: model.c(),
        layout,
        classes: model.classes().to_vec(),
    };
    let mut rows = Vec::with_capacity(model.classes().len());
    for class in model.classes() {
        let (w, b) = model.weights_of(class).expect("listed class has weights");
        let mut row: Vec<f32> = w.iter().map(|v| *v as f32).collect();
        row.push(b as f32);
        rows.push(row);
    }
    write_model(path, &header, crate::fvec::encode_f32(model.dim() + 1, &rows)?)
}

pub fn read_classifier(path: &Path) -> Result<ClassifierModel> {
    let (header_line, payload) = split_model(path)?;
    peek_kind(path, &header_line, "classifier")?;
    let header: ClassifierHeader = serde_json::from_str(&header_line)
        .with_context(|| format!("{}: malformed model header", path.display()))?;
    let layout = RegionLayout::new(header.layout)
        .map_err(|e| anyhow!("{}: {e}", path.display()))?;
    let (dim, rows) = crate::fvec::decode_f32(&payload, "classifier payload")?;
    if dim != layout.total_dim() + 1 || rows.len() != header.classes.len() {
        bail!("{}: payload shape disagrees with the header", path.display());
    }
    let mut weights = Vec::with_capacity(rows.len());
    let mut biases = Vec::with_capacity(rows.len());
    for row in rows {
        weights.push(row[..row.len() - 1].iter().map(|v| f64::from(*v)).collect());
        biases.push(f64::from(row[row.len() - 1]));
    }
    ClassifierModel::from_parts(layout, header.c, header.classes, weights, biases)
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use boxtransfer_core::features::FeatureVector;
    use boxtransfer_core::geometry::BoundingBox;
    use boxtransfer_core::regression::{fit_regressor, TrainingPair};

    #[test]
    fn regressor_survives_a_save_load_cycle() {
        let pairs: Vec<TrainingPair> = (0..6)
            .map(|i| {
                let shift = f64::from(i % 3);
                TrainingPair {
                    class: if i % 2 == 0 { "a".into() } else { "b".into() },
                    feature: FeatureVector::new(vec![1.0, shift, shift * shift]),
                    proposal: BoundingBox::new(10.0 + shift, 10.0, 20.0, 20.0),
                    truth: BoundingBox::new(12.0 + shift, 11.0, 22.0, 18.0),
                }
            })
            .collect();
        let model = fit_regressor(&pairs, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.model");
        write_regressor(&path, &model).unwrap();
        let back = read_regressor(&path).unwrap();
        assert_eq!(back.dim(), model.dim());
        assert_eq!(back.lambda(), model.lambda());
        assert_eq!(back.convention(), model.convention());
        let w = model.weights_of("a").unwrap();
        let v = back.weights_of("a").unwrap();
        for t in 0..4 {
            for (a, b) in w[t].iter().zip(&v[t]) {
                assert_eq!(*a as f32, *b as f32);
            }
        }
    }

    #[test]
    fn classifier_round_trips_weights_at_f32() {
        let layout = RegionLayout::of(&[("full", 2), ("object", 1)]).unwrap();
        let model = ClassifierModel::from_parts(
            layout,
            5.0,
            vec!["a".into(), "b".into()],
            vec![vec![0.5, -0.25, 1.0], vec![0.0, 2.0, -1.5]],
            vec![0.125, -0.5],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.model");
        write_classifier(&path, &model).unwrap();
        let back = read_classifier(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let layout = RegionLayout::flat(2).unwrap();
        let model = ClassifierModel::from_parts(
            layout,
            1.0,
            vec!["a".into(), "b".into()],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![0.0, 0.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.model");
        write_classifier(&path, &model).unwrap();
        let err = read_regressor(&path).unwrap_err().to_string();
        assert!(err.contains("expected a regressor"), "{err}");
    }
}
