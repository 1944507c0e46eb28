//! localize: transfer object boxes onto every test image by iterative
//! nearest-neighbor fusion, optionally localizing parts inside the result.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use boxtransfer_core::features::Stage;
use boxtransfer_core::index::{build_index, AnnotatedImage, TrainingIndex};
use boxtransfer_core::recognition::ClassifierModel;
use boxtransfer_core::transfer::{
    iterative_localize, localize_parts, rebuild_training_crops, CroppedTrainingSet, TransferConfig,
};
use rayon::prelude::*;
use serde_json::json;

use crate::batch::{check_fail_fast, note_errors, write_errors, BatchError};
use crate::config::{check_exists, resolve_path};
use crate::dataset::{self, PairDataset};
use crate::locfile::{self, LocalizationRecord};
use crate::manifest::from_box;
use crate::{models, Ctx};

#[derive(clap::Args)]
pub struct Args {
    /// Annotated training manifest backing the transfer.
    #[arg(long, value_name = "FILE")]
    train_manifest: Option<PathBuf>,
    /// Test manifest whose images get boxes.
    #[arg(long, value_name = "FILE")]
    test_manifest: Option<PathBuf>,
    /// Directory of <id>.pgm graymaps for raster-backed manifests.
    #[arg(long, value_name = "DIR")]
    raster_dir: Option<PathBuf>,
    /// Also transfer part boxes inside each localized object.
    #[arg(long)]
    parts: bool,
    /// Seed with ground-truth object boxes instead of localizing (given-box
    /// protocol); parts are still transferred.
    #[arg(long)]
    seed_oracle_object: bool,
    /// Comma-separated test ids to process (default: all).
    #[arg(long, value_name = "IDS", value_delimiter = ',')]
    only: Vec<String>,
    /// Iteration budget override.
    #[arg(long, value_name = "N")]
    max_iters: Option<usize>,
    /// Neighbor count override.
    #[arg(long, value_name = "N")]
    m: Option<usize>,
    /// Fusion mode override: union, average, or intersection.
    #[arg(long, value_name = "NAME")]
    fusion: Option<String>,
    /// Stability threshold override: stop when consecutive boxes overlap this much.
    #[arg(long, value_name = "IOU")]
    stability_iou: Option<f64>,
    /// Distance metric override: cosine or euclidean.
    #[arg(long, value_name = "NAME")]
    metric: Option<String>,
    /// Classifier whose score can stop iteration early.
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
    /// Score that stops iteration when the classifier clears it.
    #[arg(long, value_name = "X")]
    score_threshold: Option<f64>,
    /// Abort on the first record failure instead of continuing.
    #[arg(long)]
    fail_fast: bool,
}

struct Pipeline<'a> {
    pair: &'a PairDataset,
    index: &'a TrainingIndex,
    cropped: Option<&'a CroppedTrainingSet>,
    classifier: Option<&'a ClassifierModel>,
    part_names: Vec<String>,
    cfg: &'a TransferConfig,
    seed_oracle: bool,
    parts: bool,
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    merge_flags(&args, ctx);
    let train_path = resolve_path(
        args.train_manifest,
        ctx.cfg.paths.train_manifest.as_ref(),
        "--train-manifest",
    )?;
    let test_path = resolve_path(
        args.test_manifest,
        ctx.cfg.paths.test_manifest.as_ref(),
        "--test-manifest",
    )?;
    check_exists(&train_path)?;
    check_exists(&test_path)?;
    let raster_dir = args.raster_dir.clone().or_else(|| ctx.cfg.paths.raster_dir.clone());
    if let Some(dir) = &raster_dir {
        check_exists(dir)?;
    }
    let cfg = ctx.cfg.transfer.to_core()?;

    let pair = dataset::load_pair(&train_path, &test_path, raster_dir.as_deref())?;
    if !pair.test_serves(&Stage::FullImage) {
        bail!(
            "{}: retrieval needs full-image features on every test record",
            test_path.display()
        );
    }
    let index = build_index(pair.train.clone(), pair.provider(), &[Stage::FullImage], cfg.metric)
        .map_err(|e| anyhow!("{}: {e}", train_path.display()))?;

    let classifier = match args.classifier.clone().or_else(|| ctx.cfg.paths.classifier.clone()) {
        None => None,
        Some(path) => {
            check_exists(&path)?;
            let model = models::read_classifier(&path)?;
            if model.dim() != pair.provider().dim() {
                bail!(
                    "classifier dimension {} does not match feature dimension {}",
                    model.dim(),
                    pair.provider().dim()
                );
            }
            if cfg.score_threshold.is_none() {
                eprintln!("note: classifier given without --score-threshold; it cannot stop iteration");
            }
            Some(model)
        }
    };

    let skip_reason = cropped_skip_reason(args.seed_oracle_object, args.parts, &cfg);
    let cropped = build_cropped_set(&skip_reason, &pair, &index, &cfg)?;
    if args.parts && cropped.is_none() {
        bail!(
            "part transfer needs the cropped training set: every training record must have an \
             object box and serve object-stage features"
        );
    }

    let targets = select_targets(&pair.test, &args.only)?;
    ctx.cfg.write_effective(&ctx.output_dir)?;

    let pipeline = Pipeline {
        pair: &pair,
        index: &index,
        cropped: cropped.as_ref(),
        classifier: classifier.as_ref(),
        part_names: cropped.as_ref().map(|c| c.part_names()).unwrap_or_default(),
        cfg: &cfg,
        seed_oracle: args.seed_oracle_object,
        parts: args.parts,
    };
    let results: Vec<Result<LocalizationRecord, BatchError>> =
        targets.par_iter().map(|rec| localize_one(rec, &pipeline)).collect();

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => errors.push(e),
        }
    }
    check_fail_fast(args.fail_fast, &errors)?;

    let out_path = ctx.output_dir.join("localizations.jsonl");
    locfile::write(&out_path, &records)?;
    let err_path = write_errors(&ctx.output_dir, &errors)?;
    note_errors(&errors, &err_path);

    ctx.emit(
        format!(
            "localized {} of {} test images -> {}",
            records.len(),
            targets.len(),
            out_path.display()
        ),
        json!({
            "command": "localize",
            "localized": records.len(),
            "failed": errors.len(),
            "output": out_path,
            "errors": err_path,
        }),
    );
    Ok(())
}

fn merge_flags(args: &Args, ctx: &mut Ctx) {
    let t = &mut ctx.cfg.transfer;
    if let Some(m) = args.m {
        t.m = m;
    }
    if let Some(fusion) = &args.fusion {
        t.fusion = fusion.clone();
    }
    if let Some(n) = args.max_iters {
        t.max_iters = n;
    }
    if let Some(s) = args.stability_iou {
        t.stability_iou = s;
    }
    if let Some(metric) = &args.metric {
        t.metric = metric.clone();
    }
    if let Some(s) = args.score_threshold {
        t.score_threshold = Some(s);
    }
}

/// Non-empty when this run provably never consults the cropped set, so
/// building it would be wasted work.
fn cropped_skip_reason(seed_oracle: bool, parts: bool, cfg: &TransferConfig) -> String {
    if seed_oracle && !parts {
        "oracle seeding without parts".to_string()
    } else if cfg.max_iters < 2 && !parts {
        "a single-iteration budget".to_string()
    } else {
        String::new()
    }
}

/// The cropped training set drives iterations past the first and all part
/// transfer. Built when the training data supports it; otherwise iteration
/// stops at stage exhaustion.
fn build_cropped_set(
    skip_reason: &str,
    pair: &PairDataset,
    index: &TrainingIndex,
    cfg: &TransferConfig,
) -> Result<Option<CroppedTrainingSet>> {
    if !skip_reason.is_empty() {
        return Ok(None);
    }
    let all_objects = pair.train.iter().all(|r| r.object_box.is_some());
    let serves = pair.train_serves(&Stage::ObjectCrop);
    if !all_objects || !serves {
        let why = if all_objects {
            "training records lack object-stage features"
        } else {
            "training records lack object boxes"
        };
        eprintln!("note: crop refinement disabled: {why}; localization stops after one iteration");
        return Ok(None);
    }
    let set = rebuild_training_crops(index, pair.provider(), cfg)
        .context("rebuilding training crops")?;
    Ok(Some(set))
}

fn select_targets<'a>(
    test: &'a [AnnotatedImage],
    only: &[String],
) -> Result<Vec<&'a AnnotatedImage>> {
    if only.is_empty() {
        return Ok(test.iter().collect());
    }
    let by_id: BTreeMap<&str, &AnnotatedImage> =
        test.iter().map(|r| (r.id.as_str(), r)).collect();
    only.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| anyhow!("unknown test id `{id}` in --only"))
        })
        .collect()
}

fn localize_one(rec: &AnnotatedImage, p: &Pipeline<'_>) -> Result<LocalizationRecord, BatchError> {
    let fail = |scope: &str, error: String| BatchError {
        id: rec.id.clone(),
        scope: scope.to_string(),
        error,
    };
    let (object, iterations, reason, seeded) = if p.seed_oracle {
        let b = rec.object_box.ok_or_else(|| {
            fail("object", "--seed-oracle-object needs a ground-truth object box".to_string())
        })?;
        (b, 0, None, true)
    } else {
        let (b, trace) = iterative_localize(
            &rec.id,
            p.pair.provider(),
            p.index,
            p.cropped,
            p.cfg,
            p.classifier,
        )
        .map_err(|e| fail("object", e.to_string()))?;
        (b, trace.len(), Some(trace.reason.name().to_string()), false)
    };

    let parts = if p.parts {
        let set = p.cropped.expect("checked before the batch");
        let located =
            localize_parts(object, &rec.id, p.pair.provider(), set, &p.part_names, p.cfg)
                .map_err(|e| fail("parts", e.to_string()))?;
        Some(
            located
                .into_iter()
                .map(|(name, entry)| (name, entry.map(|(b, _)| from_box(b))))
                .collect(),
        )
    } else {
        None
    };

    Ok(LocalizationRecord {
        id: rec.id.clone(),
        object_box: from_box(object),
        parts,
        iterations,
        reason,
        seeded,
    })
}
