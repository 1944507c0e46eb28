//! train-classifier: build per-region features for every labeled training
//! record, concatenate them in layout order, and train the one-vs-all
//! linear classifier.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use boxtransfer_core::features::{FeatureVector, Stage};
use boxtransfer_core::geometry::BoundingBox;
use boxtransfer_core::index::AnnotatedImage;
use boxtransfer_core::recognition::{concat_regions, train_svm, RegionLayout};
use rayon::prelude::*;
use serde_json::json;

use crate::batch::{check_fail_fast, note_errors, write_errors, BatchError};
use crate::config::{check_exists, resolve_path};
use crate::dataset;
use crate::{models, Ctx};

#[derive(clap::Args)]
pub struct Args {
    /// Labeled training manifest.
    #[arg(long, value_name = "FILE")]
    train_manifest: Option<PathBuf>,
    /// Directory of <id>.pgm graymaps for raster-backed manifests.
    #[arg(long, value_name = "DIR")]
    raster_dir: Option<PathBuf>,
    /// Comma-separated regions to concatenate: full, object, part:<name>.
    #[arg(long, value_name = "LIST")]
    regions: Option<String>,
    /// Regularization trade-off override.
    #[arg(long = "c", value_name = "X")]
    c: Option<f64>,
    /// Training epochs override.
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Abort on the first record failure instead of continuing.
    #[arg(long)]
    fail_fast: bool,
}

/// Parse a region list into stages, in the order given.
pub fn parse_regions(list: &str) -> Result<Vec<Stage>> {
    let mut stages = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let stage = Stage::from_str(name).map_err(|e| anyhow!("--regions: {e}"))?;
        if stages.contains(&stage) {
            bail!("--regions lists `{name}` twice");
        }
        stages.push(stage);
    }
    if stages.is_empty() {
        bail!("--regions must name at least one region");
    }
    Ok(stages)
}

/// Ground-truth region box for feature extraction; None when unannotated.
pub fn region_box(rec: &AnnotatedImage, stage: &Stage) -> Option<BoundingBox> {
    match stage {
        Stage::FullImage => Some(rec.size.frame_box()),
        Stage::ObjectCrop => rec.object_box,
        Stage::PartCrop(name) => rec.part_boxes.get(name).copied().flatten(),
    }
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    if let Some(c) = args.c {
        ctx.cfg.svm.c = c;
    }
    if let Some(epochs) = args.epochs {
        ctx.cfg.svm.epochs = epochs;
    }
    if let Some(regions) = args.regions {
        ctx.cfg.svm.regions = regions;
    }
    let train_path = resolve_path(
        args.train_manifest,
        ctx.cfg.paths.train_manifest.as_ref(),
        "--train-manifest",
    )?;
    check_exists(&train_path)?;
    let raster_dir = args.raster_dir.or_else(|| ctx.cfg.paths.raster_dir.clone());
    if let Some(dir) = &raster_dir {
        check_exists(dir)?;
    }
    let stages = parse_regions(&ctx.cfg.svm.regions)?;
    let (c, epochs, seed) = (ctx.cfg.svm.c, ctx.cfg.svm.epochs, ctx.cfg.svm.seed);

    let ds = dataset::load(&train_path, raster_dir.as_deref())?;
    let provider = ds.provider.as_dyn();
    let dim = provider.dim();
    let layout = RegionLayout::new(stages.iter().map(|s| (s.to_string(), dim)).collect())
        .map_err(|e| anyhow!("building the region layout: {e}"))?;

    ctx.cfg.write_effective(&ctx.output_dir)?;

    let results: Vec<Result<(FeatureVector, String), BatchError>> = ds
        .records
        .par_iter()
        .map(|rec| {
            let fail = |scope: &str, error: String| BatchError {
                id: rec.id.clone(),
                scope: scope.to_string(),
                error,
            };
            let class = rec
                .class_label
                .clone()
                .ok_or_else(|| fail("class", "record has no class label".into()))?;
            let mut features: BTreeMap<String, Option<FeatureVector>> = BTreeMap::new();
            for stage in &stages {
                let b = region_box(rec, stage).ok_or_else(|| {
                    fail(&stage.to_string(), "record lacks the region's box".into())
                })?;
                let f = provider
                    .feature(&rec.id, b, stage)
                    .map_err(|e| fail(&stage.to_string(), e.to_string()))?;
                features.insert(stage.to_string(), Some(f));
            }
            let feature = concat_regions(&features, &layout)
                .map_err(|e| fail("concat", e.to_string()))?;
            Ok((feature, class))
        })
        .collect();

    let mut examples = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(e) => examples.push(e),
            Err(e) => errors.push(e),
        }
    }
    check_fail_fast(args.fail_fast, &errors)?;

    let model = train_svm(&examples, c, epochs, seed)
        .map_err(|e| anyhow!("training the classifier: {e}"))?
        .with_layout(layout)
        .map_err(|e| anyhow!("attaching the region layout: {e}"))?;
    let out_path = ctx.output_dir.join("classifier.model");
    models::write_classifier(&out_path, &model)?;
    let err_path = write_errors(&ctx.output_dir, &errors)?;
    note_errors(&errors, &err_path);

    ctx.emit(
        format!(
            "trained classifier on {} examples: {} classes, regions [{}], dim {} -> {}",
            examples.len(),
            model.classes().len(),
            ctx.cfg.svm.regions,
            model.dim(),
            out_path.display()
        ),
        json!({
            "command": "train-classifier",
            "examples": examples.len(),
            "classes": model.classes().len(),
            "regions": stages.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            "dim": model.dim(),
            "c": c,
            "epochs": epochs,
            "seed": seed,
            "output": out_path,
            "errors": err_path,
        }),
    );
    Ok(())
}
