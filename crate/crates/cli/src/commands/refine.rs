//! refine: apply a fitted regressor to localization results. A record whose
//! refinement cannot be computed keeps its transferred box and is noted in
//! the error manifest, so the output stays complete.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use boxtransfer_core::features::{FeatureProvider, Stage};
use boxtransfer_core::geometry::clamp_box;
use boxtransfer_core::index::AnnotatedImage;
use boxtransfer_core::regression::{refine_box, RegressorModel};
use rayon::prelude::*;
use serde_json::json;

use crate::batch::{check_fail_fast, note_errors, write_errors, BatchError};
use crate::commands::train_regressor::UNLABELED_CLASS;
use crate::config::{check_exists, resolve_path};
use crate::dataset;
use crate::locfile::{self, LocalizationRecord};
use crate::manifest::{from_box, to_box};
use crate::{models, predfile, Ctx};

#[derive(clap::Args)]
pub struct Args {
    /// Fitted regressor model file.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Localization results to refine.
    #[arg(long, value_name = "FILE")]
    localizations: Option<PathBuf>,
    /// Test manifest supplying frames and features.
    #[arg(long, value_name = "FILE")]
    test_manifest: Option<PathBuf>,
    /// Directory of <id>.pgm graymaps for raster-backed manifests.
    #[arg(long, value_name = "DIR")]
    raster_dir: Option<PathBuf>,
    /// Also refine part boxes with the same per-class model.
    #[arg(long)]
    apply_to_parts: bool,
    /// Take classes from this prediction file instead of the manifest.
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
    /// Abort on the first record failure instead of continuing.
    #[arg(long)]
    fail_fast: bool,
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    if args.apply_to_parts {
        ctx.cfg.regression.apply_to_parts = true;
    }
    let model_path = resolve_path(args.model, ctx.cfg.paths.regressor.as_ref(), "--model")?;
    let loc_path = resolve_path(
        args.localizations,
        ctx.cfg.paths.localizations.as_ref(),
        "--localizations",
    )?;
    let test_path = resolve_path(
        args.test_manifest,
        ctx.cfg.paths.test_manifest.as_ref(),
        "--test-manifest",
    )?;
    check_exists(&model_path)?;
    check_exists(&loc_path)?;
    check_exists(&test_path)?;
    let raster_dir = args.raster_dir.or_else(|| ctx.cfg.paths.raster_dir.clone());
    if let Some(dir) = &raster_dir {
        check_exists(dir)?;
    }
    let apply_to_parts = ctx.cfg.regression.apply_to_parts;

    let model = models::read_regressor(&model_path)?;
    let locs = locfile::read(&loc_path)?;
    let ds = dataset::load(&test_path, raster_dir.as_deref())?;
    if ds.provider().dim() != model.dim() {
        anyhow::bail!(
            "regressor dimension {} does not match feature dimension {}",
            model.dim(),
            ds.provider().dim()
        );
    }
    let by_id: BTreeMap<&str, &AnnotatedImage> =
        ds.records.iter().map(|r| (r.id.as_str(), r)).collect();
    let classes = match args.predictions.or_else(|| ctx.cfg.paths.predictions.clone()) {
        None => None,
        Some(path) => {
            check_exists(&path)?;
            let map: BTreeMap<String, String> =
                predfile::read(&path)?.into_iter().map(|p| (p.id, p.class)).collect();
            Some(map)
        }
    };

    ctx.cfg.write_effective(&ctx.output_dir)?;

    let results: Vec<(LocalizationRecord, Vec<BatchError>)> = locs
        .par_iter()
        .map(|loc| {
            refine_one(loc, &model, &by_id, classes.as_ref(), ds.provider(), apply_to_parts)
        })
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (rec, mut errs) in results {
        records.push(rec);
        errors.append(&mut errs);
    }
    check_fail_fast(args.fail_fast, &errors)?;

    let out_path = ctx.output_dir.join("refined.jsonl");
    locfile::write(&out_path, &records)?;
    let err_path = write_errors(&ctx.output_dir, &errors)?;
    note_errors(&errors, &err_path);

    ctx.emit(
        format!("refined {} localization records -> {}", records.len(), out_path.display()),
        json!({
            "command": "refine",
            "records": records.len(),
            "failed_fields": errors.len(),
            "output": out_path,
            "errors": err_path,
        }),
    );
    Ok(())
}

/// Refine every box of one record, keeping originals where refinement fails.
fn refine_one(
    loc: &LocalizationRecord,
    model: &RegressorModel,
    by_id: &BTreeMap<&str, &AnnotatedImage>,
    predicted_classes: Option<&BTreeMap<String, String>>,
    provider: &dyn FeatureProvider,
    apply_to_parts: bool,
) -> (LocalizationRecord, Vec<BatchError>) {
    let mut out = loc.clone();
    let mut errors = Vec::new();
    let mut fail = |scope: &str, error: String| {
        errors.push(BatchError { id: loc.id.clone(), scope: scope.to_string(), error });
    };

    let Some(rec) = by_id.get(loc.id.as_str()) else {
        fail("record", "id missing from the test manifest".to_string());
        return (out, errors);
    };
    let class_owned = predicted_classes
        .and_then(|m| m.get(&loc.id).cloned())
        .or_else(|| rec.class_label.clone());
    let class = match class_owned.as_deref() {
        Some(c) if model.weights_of(c).is_some() => c,
        None if model.weights_of(UNLABELED_CLASS).is_some() => UNLABELED_CLASS,
        Some(c) if model.weights_of(UNLABELED_CLASS).is_some() => {
            fail("class", format!("model has no weights for class `{c}`; using the fallback"));
            UNLABELED_CLASS
        }
        missing => {
            let what = missing.map_or("record has no class".to_string(), |c| {
                format!("model has no weights for class `{c}`")
            });
            fail("class", what);
            return (out, errors);
        }
    };

    match refine_region(model, class, to_box(loc.object_box), &loc.id, rec, provider, &Stage::ObjectCrop) {
        Ok(b) => out.object_box = from_box(b),
        Err(e) => fail("object", e),
    }
    if apply_to_parts {
        if let Some(parts) = &mut out.parts {
            for (name, slot) in parts.iter_mut() {
                let Some(b) = slot else { continue };
                let stage = Stage::part(name);
                match refine_region(model, class, to_box(*b), &loc.id, rec, provider, &stage) {
                    Ok(refined) => *slot = Some(from_box(refined)),
                    Err(e) => fail(&stage.to_string(), e),
                }
            }
        }
    }
    (out, errors)
}

fn refine_region(
    model: &RegressorModel,
    class: &str,
    proposal: boxtransfer_core::geometry::BoundingBox,
    id: &str,
    rec: &AnnotatedImage,
    provider: &dyn FeatureProvider,
    stage: &Stage,
) -> Result<boxtransfer_core::geometry::BoundingBox, String> {
    let feature = provider.feature(id, proposal, stage).map_err(|e| e.to_string())?;
    let refined = refine_box(model, class, proposal, &feature).map_err(|e| e.to_string())?;
    clamp_box(refined, rec.size).map_err(|e| e.to_string())
}
