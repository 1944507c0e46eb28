//! synth-gen: write a self-contained dataset drawn from the built-in
//! synthetic world, as train/test manifests plus either binary feature
//! files or PGM rasters.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use boxtransfer_core::features::{FeatureProvider, PrecomputedProvider, Stage};
use boxtransfer_core::geometry::ImageSize;
use boxtransfer_core::index::AnnotatedImage;
use boxtransfer_core::synthetic::{generate, SynthConfig, WorldAssets};
use serde_json::json;

use crate::manifest::{self, FeatureRef, ManifestRecord};
use crate::{fvec, pgm, Ctx};

#[derive(clap::Args)]
pub struct Args {
    /// Training records to generate.
    #[arg(long, value_name = "N")]
    n_train: Option<usize>,
    /// Test records to generate.
    #[arg(long, value_name = "N")]
    n_test: Option<usize>,
    /// Appearance clusters (doubles as the class count).
    #[arg(long, value_name = "N")]
    clusters: Option<usize>,
    /// Geometric noise around each cluster's slot.
    #[arg(long, value_name = "X")]
    jitter: Option<f64>,
    /// Feature noise (vector mode) or background clutter (raster mode).
    #[arg(long, value_name = "X")]
    noise: Option<f64>,
    /// Emit PGM rasters instead of precomputed feature files.
    #[arg(long)]
    raster: bool,
    /// Frame width in pixels.
    #[arg(long, value_name = "W")]
    width: Option<f64>,
    /// Frame height in pixels.
    #[arg(long, value_name = "H")]
    height: Option<f64>,
}

fn to_manifest(rec: &AnnotatedImage) -> ManifestRecord {
    ManifestRecord {
        id: rec.id.clone(),
        width: rec.size.width,
        height: rec.size.height,
        class: rec.class_label.clone(),
        object_box: rec.object_box.map(manifest::from_box),
        parts: if rec.part_boxes.is_empty() {
            None
        } else {
            Some(
                rec.part_boxes
                    .iter()
                    .map(|(n, b)| (n.clone(), b.map(manifest::from_box)))
                    .collect(),
            )
        },
        features: None,
    }
}

/// Write one feature file per stage, rows in record order, and point each
/// manifest record's feature map at its row.
fn attach_features(
    split: &str,
    records: &mut [ManifestRecord],
    annotated: &[AnnotatedImage],
    provider: &PrecomputedProvider,
    features_dir: &Path,
) -> Result<Vec<String>> {
    let mut stages: Vec<Stage> = provider
        .stages_of(&annotated[0].id)
        .ok_or_else(|| anyhow!("generated id `{}` has no features", annotated[0].id))?
        .cloned()
        .collect();
    stages.sort_by_key(|s| s.to_string());

    let mut files = Vec::new();
    for stage in &stages {
        let name = format!("{split}-{}.fvec", stage.to_string().replace(':', "-"));
        let rel = format!("features/{name}");
        let mut rows = Vec::with_capacity(annotated.len());
        for rec in annotated {
            let f = provider
                .feature(&rec.id, rec.size.frame_box(), stage)
                .with_context(|| format!("reading `{}` of `{}`", stage, rec.id))?;
            rows.push(f);
        }
        let dim = rows[0].values().len();
        fvec::write(&features_dir.join(&name), dim, rows.iter().map(|r| r.values()))?;
        for (i, rec) in records.iter_mut().enumerate() {
            rec.features
                .get_or_insert_with(BTreeMap::new)
                .insert(stage.to_string(), FeatureRef::File { file: rel.clone(), row: i });
        }
        files.push(rel);
    }
    Ok(files)
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    let s = &mut ctx.cfg.synth;
    if let Some(n) = args.n_train {
        s.n_train = n;
    }
    if let Some(n) = args.n_test {
        s.n_test = n;
    }
    if let Some(n) = args.clusters {
        s.clusters = n;
    }
    if let Some(x) = args.jitter {
        s.jitter = x;
    }
    if let Some(x) = args.noise {
        s.noise = x;
    }
    if args.raster {
        s.raster = true;
    }
    if let Some(w) = args.width {
        s.width = w;
    }
    if let Some(h) = args.height {
        s.height = h;
    }
    let cfg = SynthConfig {
        seed: s.seed,
        n_train: s.n_train,
        n_test: s.n_test,
        n_clusters: s.clusters,
        raster: s.raster,
        image_size: ImageSize::new(s.width, s.height),
        box_jitter: s.jitter,
        feature_noise: s.noise,
        ..SynthConfig::default()
    };

    let world = generate(&cfg).map_err(|e| anyhow!("generating the world: {e}"))?;
    ctx.cfg.write_effective(&ctx.output_dir)?;

    let mut train: Vec<ManifestRecord> = world.train.iter().map(to_manifest).collect();
    let mut test: Vec<ManifestRecord> = world.test.iter().map(to_manifest).collect();

    let mut feature_files = Vec::new();
    let mut raster_count = 0usize;
    match &world.assets {
        WorldAssets::Vector(provider) => {
            let features_dir = ctx.output_dir.join("features");
            fs::create_dir_all(&features_dir)
                .with_context(|| format!("creating {}", features_dir.display()))?;
            feature_files.extend(attach_features(
                "train",
                &mut train,
                &world.train,
                provider,
                &features_dir,
            )?);
            feature_files.extend(attach_features(
                "test",
                &mut test,
                &world.test,
                provider,
                &features_dir,
            )?);
        }
        WorldAssets::Raster(provider) => {
            let raster_dir = ctx.output_dir.join("rasters");
            fs::create_dir_all(&raster_dir)
                .with_context(|| format!("creating {}", raster_dir.display()))?;
            for id in provider.ids() {
                let image = provider
                    .image(id)
                    .ok_or_else(|| anyhow!("generated id `{id}` has no raster"))?;
                pgm::write(&raster_dir.join(format!("{id}.pgm")), image)?;
                raster_count += 1;
            }
        }
    }

    let train_path = ctx.output_dir.join("train-manifest.jsonl");
    let test_path = ctx.output_dir.join("test-manifest.jsonl");
    manifest::write(&train_path, &train)?;
    manifest::write(&test_path, &test)?;

    let mode = if cfg.raster { "raster" } else { "vector" };
    ctx.emit(
        format!(
            "generated {} train + {} test records ({mode} mode, {} classes, seed {})\n\
             train manifest: {}\ntest manifest:  {}",
            train.len(),
            test.len(),
            cfg.n_clusters,
            cfg.seed,
            train_path.display(),
            test_path.display()
        ),
        json!({
            "command": "synth-gen",
            "train": train.len(),
            "test": test.len(),
            "classes": cfg.n_clusters,
            "seed": cfg.seed,
            "mode": mode,
            "train_manifest": train_path,
            "test_manifest": test_path,
            "feature_files": feature_files,
            "rasters": raster_count,
        }),
    );
    Ok(())
}
