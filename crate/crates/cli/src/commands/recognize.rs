//! recognize: score every test record with a trained classifier and write
//! ranked predictions. Region boxes come from a localization file when given,
//! falling back to manifest annotations.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use boxtransfer_core::evaluation::accuracy;
use boxtransfer_core::features::{DistanceMetric, FeatureVector, Stage};
use boxtransfer_core::geometry::BoundingBox;
use boxtransfer_core::index::{build_index, AnnotatedImage};
use boxtransfer_core::recognition::{concat_regions, predict, ClassifierModel};
use rayon::prelude::*;
use serde_json::json;

use crate::batch::{check_fail_fast, note_errors, write_errors, BatchError};
use crate::config::{check_exists, resolve_path};
use crate::dataset::{self, Dataset};
use crate::locfile::{self, LocalizationRecord};
use crate::manifest;
use crate::predfile::{self, PredictionRecord, ScoreEntry};
use crate::{models, Ctx};

#[derive(clap::Args)]
pub struct Args {
    /// Trained classifier file.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Test manifest to classify.
    #[arg(long, value_name = "FILE")]
    test_manifest: Option<PathBuf>,
    /// Directory of <id>.pgm graymaps for raster-backed manifests.
    #[arg(long, value_name = "DIR")]
    raster_dir: Option<PathBuf>,
    /// Localization results supplying object and part boxes.
    #[arg(long, value_name = "FILE")]
    localizations: Option<PathBuf>,
    /// How many ranked class scores to keep per prediction.
    #[arg(long, value_name = "N")]
    top_k: Option<usize>,
    /// Abort on the first record failure instead of continuing.
    #[arg(long)]
    fail_fast: bool,
}

/// Pick the box for one region: localized when available, annotation otherwise.
fn region_source(
    rec: &AnnotatedImage,
    loc: Option<&LocalizationRecord>,
    stage: &Stage,
) -> Option<BoundingBox> {
    match stage {
        Stage::FullImage => Some(rec.size.frame_box()),
        Stage::ObjectCrop => loc
            .map(|l| manifest::to_box(l.object_box))
            .or(rec.object_box),
        Stage::PartCrop(name) => loc
            .and_then(|l| l.parts.as_ref())
            .and_then(|p| p.get(name).copied())
            .map(|b| b.map(manifest::to_box))
            .unwrap_or_else(|| rec.part_boxes.get(name).copied().flatten()),
    }
}

fn classify_one(
    rec: &AnnotatedImage,
    ds: &Dataset,
    model: &ClassifierModel,
    loc: Option<&LocalizationRecord>,
    top_k: usize,
) -> (PredictionRecord, Vec<BatchError>) {
    let mut errors = Vec::new();
    let provider = ds.provider.as_dyn();
    let mut features: BTreeMap<String, Option<FeatureVector>> = BTreeMap::new();
    for (region, _) in model.layout().regions() {
        let stage: Stage = match region.parse() {
            Ok(s) => s,
            Err(e) => {
                errors.push(BatchError {
                    id: rec.id.clone(),
                    scope: region.clone(),
                    error: e.to_string(),
                });
                features.insert(region.clone(), None);
                continue;
            }
        };
        // A provider serving fixed per-stage vectors ignores the box, so a
        // missing annotation only matters when crops are really computed.
        let region_box = match region_source(rec, loc, &stage) {
            Some(b) => Some(b),
            None if !provider.recomputes_crops() => Some(rec.size.frame_box()),
            None => None,
        };
        let got = match region_box {
            Some(b) => provider.feature(&rec.id, b, &stage).map_err(|e| e.to_string()),
            None => Err("no box available for the region".to_string()),
        };
        match got {
            Ok(f) => {
                features.insert(region.clone(), Some(f));
            }
            Err(error) => {
                errors.push(BatchError {
                    id: rec.id.clone(),
                    scope: region.clone(),
                    error,
                });
                features.insert(region.clone(), None);
            }
        }
    }
    let feature = match concat_regions(&features, model.layout()) {
        Ok(f) => f,
        Err(e) => {
            errors.push(BatchError {
                id: rec.id.clone(),
                scope: "concat".to_string(),
                error: e.to_string(),
            });
            FeatureVector::new(vec![0.0; model.dim()])
        }
    };
    let (class, values) = match predict(model, &feature) {
        Ok(p) => p,
        Err(e) => {
            errors.push(BatchError {
                id: rec.id.clone(),
                scope: "predict".to_string(),
                error: e.to_string(),
            });
            (model.classes()[0].clone(), vec![0.0; model.classes().len()])
        }
    };
    let mut scores: Vec<ScoreEntry> = model
        .classes()
        .iter()
        .zip(&values)
        .map(|(c, v)| ScoreEntry {
            class: c.clone(),
            score: *v,
        })
        .collect();
    scores.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| a.class.cmp(&b.class))
    });
    scores.truncate(top_k.max(1));
    (
        PredictionRecord {
            id: rec.id.clone(),
            class,
            scores,
        },
        errors,
    )
}

/// Fraction of labeled records the prediction map gets right, when every
/// record carries a label; None (with a note) otherwise.
fn labeled_accuracy(ds: &Dataset, predicted: &BTreeMap<String, String>) -> Option<f64> {
    if !ds.records.iter().all(|r| r.class_label.is_some()) {
        eprintln!("note: accuracy skipped, not every test record has a class label");
        return None;
    }
    let index = match build_index(
        ds.records.clone(),
        ds.provider.as_dyn(),
        &[Stage::FullImage],
        DistanceMetric::Cosine,
    ) {
        Ok(ix) => ix,
        Err(e) => {
            eprintln!("note: accuracy skipped: {e}");
            return None;
        }
    };
    match accuracy(predicted, &index) {
        Ok(a) => Some(a),
        Err(e) => {
            eprintln!("note: accuracy skipped: {e}");
            None
        }
    }
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    if let Some(k) = args.top_k {
        ctx.cfg.svm.top_k = k;
    }
    let model_path = resolve_path(args.model, ctx.cfg.paths.classifier.as_ref(), "--model")?;
    check_exists(&model_path)?;
    let test_path = resolve_path(
        args.test_manifest,
        ctx.cfg.paths.test_manifest.as_ref(),
        "--test-manifest",
    )?;
    check_exists(&test_path)?;
    let raster_dir = args.raster_dir.or_else(|| ctx.cfg.paths.raster_dir.clone());
    if let Some(dir) = &raster_dir {
        check_exists(dir)?;
    }
    let loc_path = args
        .localizations
        .or_else(|| ctx.cfg.paths.localizations.clone());

    let model = models::read_classifier(&model_path)?;
    let ds = dataset::load(&test_path, raster_dir.as_deref())?;
    let locs: BTreeMap<String, LocalizationRecord> = match &loc_path {
        Some(p) => {
            check_exists(p)?;
            locfile::read(p)?
                .into_iter()
                .map(|l| (l.id.clone(), l))
                .collect()
        }
        None => BTreeMap::new(),
    };
    let top_k = ctx.cfg.svm.top_k;
    ctx.cfg.write_effective(&ctx.output_dir)?;

    let results: Vec<(PredictionRecord, Vec<BatchError>)> = ds
        .records
        .par_iter()
        .map(|rec| classify_one(rec, &ds, &model, locs.get(&rec.id), top_k))
        .collect();
    let mut predictions = Vec::new();
    let mut errors = Vec::new();
    for (p, e) in results {
        predictions.push(p);
        errors.extend(e);
    }
    check_fail_fast(args.fail_fast, &errors)?;

    let out_path = ctx.output_dir.join("predictions.jsonl");
    predfile::write(&out_path, &predictions)?;
    let err_path = write_errors(&ctx.output_dir, &errors)?;
    note_errors(&errors, &err_path);

    let predicted: BTreeMap<String, String> = predictions
        .iter()
        .map(|p| (p.id.clone(), p.class.clone()))
        .collect();
    let acc = labeled_accuracy(&ds, &predicted);

    let mut text = format!(
        "recognized {} records with {} classes -> {}",
        predictions.len(),
        model.classes().len(),
        out_path.display()
    );
    if let Some(a) = acc {
        text.push_str(&format!("\naccuracy against manifest labels: {a:.1}%"));
    }
    ctx.emit(
        text,
        json!({
            "command": "recognize",
            "predictions": predictions.len(),
            "classes": model.classes().len(),
            "accuracy_percent": acc,
            "output": out_path,
            "errors": err_path,
        }),
    );
    Ok(())
}
