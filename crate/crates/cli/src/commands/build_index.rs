//! build-index: parse and validate a manifest plus its assets, build the
//! retrieval index, and write a summary of what it holds.

use std::path::PathBuf;

use anyhow::{anyhow, Result};
use boxtransfer_core::index::build_index;
use serde_json::json;

use crate::config::{check_exists, resolve_path};
use crate::dataset::{self, indexable_stages};
use crate::Ctx;

#[derive(clap::Args)]
pub struct Args {
    /// Dataset manifest to validate and index.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Directory of <id>.pgm graymaps for manifests without feature refs.
    #[arg(long, value_name = "DIR")]
    raster_dir: Option<PathBuf>,
    /// Distance metric for retrieval: cosine or euclidean.
    #[arg(long, value_name = "NAME")]
    metric: Option<String>,
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    if let Some(metric) = args.metric {
        ctx.cfg.transfer.metric = metric;
    }
    let manifest = resolve_path(
        args.manifest,
        ctx.cfg.paths.train_manifest.as_ref(),
        "--manifest",
    )?;
    check_exists(&manifest)?;
    let raster_dir = args.raster_dir.or_else(|| ctx.cfg.paths.raster_dir.clone());
    if let Some(dir) = &raster_dir {
        check_exists(dir)?;
    }
    let metric = ctx.cfg.transfer.metric()?;

    let ds = dataset::load(&manifest, raster_dir.as_deref())?;
    let stages = indexable_stages(&ds.records, |s| ds.serves_stage(s));
    let index = build_index(ds.records, ds.provider.as_dyn(), &stages, metric)
        .map_err(|e| anyhow!("{}: {e}", manifest.display()))?;

    let stage_names: Vec<String> = stages.iter().map(|s| s.to_string()).collect();
    let classes = index.class_labels();
    let parts = index.part_names();
    let annotated = index.records().iter().filter(|r| r.object_box.is_some()).count();

    ctx.cfg.write_effective(&ctx.output_dir)?;
    let summary = json!({
        "records": index.len(),
        "dim": index.dim(),
        "metric": metric.name(),
        "stages": stage_names,
        "classes": classes,
        "parts": parts,
        "annotated_objects": annotated,
    });
    let path = ctx.output_dir.join("index-summary.json");
    std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&summary).unwrap()))?;

    ctx.emit(
        format!(
            "validated index: {} records, dim {}, stages [{}], {} classes, {} parts -> {}",
            index.len(),
            index.dim(),
            stage_names.join(", "),
            classes.len(),
            parts.len(),
            path.display()
        ),
        json!({"command": "build-index", "summary": summary, "output": path}),
    );
    Ok(())
}
