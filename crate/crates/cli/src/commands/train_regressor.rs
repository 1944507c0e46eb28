//! train-regressor: generate leave-one-out transferred proposals on the
//! training set, describe each proposal's crop, and fit the per-class ridge
//! regressor from those features to the ground-truth boxes.

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use boxtransfer_core::features::Stage;
use boxtransfer_core::index::build_index;
use boxtransfer_core::regression::{fit_regressor_with, TrainingPair};
use boxtransfer_core::transfer::{transfer_step, BoxField};
use rayon::prelude::*;
use serde_json::json;

use crate::batch::{check_fail_fast, note_errors, write_errors, BatchError};
use crate::config::{check_exists, resolve_path};
use crate::dataset;
use crate::{models, Ctx};

/// Class key for records without a label; lookups fall back to it too.
pub const UNLABELED_CLASS: &str = "*";

#[derive(clap::Args)]
pub struct Args {
    /// Annotated training manifest.
    #[arg(long, value_name = "FILE")]
    train_manifest: Option<PathBuf>,
    /// Directory of <id>.pgm graymaps for raster-backed manifests.
    #[arg(long, value_name = "DIR")]
    raster_dir: Option<PathBuf>,
    /// Ridge strength override.
    #[arg(long, value_name = "X")]
    lambda: Option<f64>,
    /// Target parameterization: size-normalized or literal-coordinate.
    #[arg(long, value_name = "NAME")]
    convention: Option<String>,
    /// Neighbor count for proposal generation.
    #[arg(long, value_name = "N")]
    m: Option<usize>,
    /// Fusion mode for proposal generation.
    #[arg(long, value_name = "NAME")]
    fusion: Option<String>,
    /// Distance metric: cosine or euclidean.
    #[arg(long, value_name = "NAME")]
    metric: Option<String>,
    /// Abort on the first record failure instead of continuing.
    #[arg(long)]
    fail_fast: bool,
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    if let Some(lambda) = args.lambda {
        ctx.cfg.regression.lambda = lambda;
    }
    if let Some(convention) = args.convention {
        ctx.cfg.regression.convention = convention;
    }
    if let Some(m) = args.m {
        ctx.cfg.transfer.m = m;
    }
    if let Some(fusion) = args.fusion {
        ctx.cfg.transfer.fusion = fusion;
    }
    if let Some(metric) = args.metric {
        ctx.cfg.transfer.metric = metric;
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
    let cfg = ctx.cfg.transfer.to_core()?;
    let convention = ctx.cfg.regression.convention()?;
    let lambda = ctx.cfg.regression.lambda;

    let ds = dataset::load(&train_path, raster_dir.as_deref())?;
    let provider = ds.provider.as_dyn();
    let index = build_index(ds.records, provider, &[Stage::FullImage], cfg.metric)
        .map_err(|e| anyhow!("{}: {e}", train_path.display()))?;
    let rows = index.stage_rows(&Stage::FullImage).expect("index carries the full stage");

    ctx.cfg.write_effective(&ctx.output_dir)?;

    let results: Vec<Result<TrainingPair, BatchError>> = index
        .records()
        .par_iter()
        .enumerate()
        .map(|(pos, rec)| {
            let fail = |scope: &str, error: String| BatchError {
                id: rec.id.clone(),
                scope: scope.to_string(),
                error,
            };
            let truth = rec
                .object_box
                .ok_or_else(|| fail("object", "record has no ground-truth object box".into()))?;
            let proposal = transfer_step(
                &rows[pos],
                rec.size,
                &index,
                &Stage::FullImage,
                BoxField::Object,
                &cfg,
                Some(&rec.id),
            )
            .map_err(|e| fail("proposal", e.to_string()))?;
            let feature = provider
                .feature(&rec.id, proposal, &Stage::ObjectCrop)
                .map_err(|e| fail("feature", e.to_string()))?;
            let class = rec.class_label.clone().unwrap_or_else(|| UNLABELED_CLASS.to_string());
            Ok(TrainingPair { class, feature, proposal, truth })
        })
        .collect();

    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(p) => pairs.push(p),
            Err(e) => errors.push(e),
        }
    }
    check_fail_fast(args.fail_fast, &errors)?;

    let model = fit_regressor_with(&pairs, lambda, convention)
        .map_err(|e| anyhow!("fitting the regressor: {e}"))?;
    let out_path = ctx.output_dir.join("regressor.model");
    models::write_regressor(&out_path, &model)?;
    let err_path = write_errors(&ctx.output_dir, &errors)?;
    note_errors(&errors, &err_path);

    ctx.emit(
        format!(
            "fitted regressor on {} proposals: {} classes, dim {}, lambda {} -> {}",
            pairs.len(),
            model.class_count(),
            model.dim(),
            lambda,
            out_path.display()
        ),
        json!({
            "command": "train-regressor",
            "pairs": pairs.len(),
            "classes": model.class_count(),
            "dim": model.dim(),
            "lambda": lambda,
            "convention": convention.name(),
            "output": out_path,
            "errors": err_path,
        }),
    );
    Ok(())
}
