//! Manifest loading: turns manifests plus their assets into annotated
//! records and a feature provider.
//!
//! A manifest either references precomputed features on every record or on
//! none of them; in the latter case pixels are read from
//! `<raster-dir>/<id>.pgm` and features are computed on demand. Commands
//! that query one split against another load both manifests into a single
//! provider so every id resolves through it.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use boxtransfer_core::features::{
    FeatureProvider, FeatureVector, PrecomputedProvider, RasterProvider, Stage,
};
use boxtransfer_core::geometry::ImageSize;
use boxtransfer_core::index::AnnotatedImage;

use crate::manifest::{self, FeatureRef, ManifestRecord};
use crate::{fvec, pgm};

#[derive(Debug)]
pub enum ProviderKind {
    Precomputed(PrecomputedProvider),
    Raster(RasterProvider),
}

impl ProviderKind {
    pub fn as_dyn(&self) -> &(dyn FeatureProvider + Sync) {
        match self {
            ProviderKind::Precomputed(p) => p,
            ProviderKind::Raster(p) => p,
        }
    }
}

#[derive(Debug)]
pub struct Dataset {
    pub records: Vec<AnnotatedImage>,
    pub provider: ProviderKind,
    /// Stages every record can serve; None means any (raster-backed).
    common_stages: Option<Vec<Stage>>,
}

impl Dataset {
    pub fn provider(&self) -> &(dyn FeatureProvider + Sync) {
        self.provider.as_dyn()
    }

    /// Whether every record carries the stage (always true for rasters).
    pub fn serves_stage(&self, stage: &Stage) -> bool {
        match &self.common_stages {
            None => true,
            Some(stages) => stages.contains(stage),
        }
    }
}

/// Two splits sharing one provider, for query-against-training commands.
#[derive(Debug)]
pub struct PairDataset {
    pub train: Vec<AnnotatedImage>,
    pub test: Vec<AnnotatedImage>,
    pub provider: ProviderKind,
    train_stages: Option<Vec<Stage>>,
    test_stages: Option<Vec<Stage>>,
}

impl PairDataset {
    pub fn provider(&self) -> &(dyn FeatureProvider + Sync) {
        self.provider.as_dyn()
    }

    pub fn train_serves(&self, stage: &Stage) -> bool {
        match &self.train_stages {
            None => true,
            Some(stages) => stages.contains(stage),
        }
    }

    pub fn test_serves(&self, stage: &Stage) -> bool {
        match &self.test_stages {
            None => true,
            Some(stages) => stages.contains(stage),
        }
    }
}

struct Parsed {
    path: PathBuf,
    rows: Vec<(usize, ManifestRecord)>,
    featured: bool,
}

fn parse(manifest_path: &Path) -> Result<Parsed> {
    let rows = manifest::read(manifest_path)?;
    let with_features = rows.iter().filter(|(_, r)| r.features.is_some()).count();
    if with_features != 0 && with_features != rows.len() {
        let (line, offender) = rows
            .iter()
            .find(|(_, r)| r.features.is_none())
            .map(|(l, r)| (*l, r.id.clone()))
            .unwrap();
        bail!(
            "{} line {line}: record `{offender}` has no feature references while others do; \
             a manifest must be uniformly precomputed or uniformly raster-backed",
            manifest_path.display()
        );
    }
    Ok(Parsed {
        path: manifest_path.to_path_buf(),
        featured: with_features == rows.len(),
        rows,
    })
}

pub fn load(manifest_path: &Path, raster_dir: Option<&Path>) -> Result<Dataset> {
    let parsed = parse(manifest_path)?;
    let records: Vec<AnnotatedImage> = parsed.rows.iter().map(|(_, r)| r.to_annotated()).collect();
    if parsed.featured {
        let mut provider = PrecomputedProvider::new();
        add_precomputed(&mut provider, &parsed)?;
        let common = common_stages(&provider, &records);
        Ok(Dataset {
            records,
            provider: ProviderKind::Precomputed(provider),
            common_stages: Some(common),
        })
    } else {
        let dir = require_raster_dir(&parsed, raster_dir)?;
        let mut provider = RasterProvider::new();
        add_rasters(&mut provider, dir, &parsed)?;
        Ok(Dataset { records, provider: ProviderKind::Raster(provider), common_stages: None })
    }
}

pub fn load_pair(
    train_path: &Path,
    test_path: &Path,
    raster_dir: Option<&Path>,
) -> Result<PairDataset> {
    let train = parse(train_path)?;
    let test = parse(test_path)?;
    if train.featured != test.featured {
        bail!(
            "{} and {} must both reference precomputed features or both be raster-backed",
            train_path.display(),
            test_path.display()
        );
    }
    for (_, r) in &test.rows {
        if train.rows.iter().any(|(_, t)| t.id == r.id) {
            bail!("id `{}` appears in both manifests", r.id);
        }
    }
    let train_records: Vec<AnnotatedImage> =
        train.rows.iter().map(|(_, r)| r.to_annotated()).collect();
    let test_records: Vec<AnnotatedImage> =
        test.rows.iter().map(|(_, r)| r.to_annotated()).collect();
    if train.featured {
        let mut provider = PrecomputedProvider::new();
        add_precomputed(&mut provider, &train)?;
        add_precomputed(&mut provider, &test)?;
        let train_stages = common_stages(&provider, &train_records);
        let test_stages = common_stages(&provider, &test_records);
        Ok(PairDataset {
            train: train_records,
            test: test_records,
            provider: ProviderKind::Precomputed(provider),
            train_stages: Some(train_stages),
            test_stages: Some(test_stages),
        })
    } else {
        let dir = require_raster_dir(&train, raster_dir)?;
        let mut provider = RasterProvider::new();
        add_rasters(&mut provider, dir, &train)?;
        add_rasters(&mut provider, dir, &test)?;
        Ok(PairDataset {
            train: train_records,
            test: test_records,
            provider: ProviderKind::Raster(provider),
            train_stages: None,
            test_stages: None,
        })
    }
}

/// Records only, for commands that never touch features (evaluation against
/// ground truth). The returned provider serves placeholder vectors so an
/// index can still be built.
pub fn load_annotations(manifest_path: &Path) -> Result<(Vec<AnnotatedImage>, PrecomputedProvider)> {
    let rows = manifest::read(manifest_path)?;
    let records: Vec<AnnotatedImage> = rows.iter().map(|(_, r)| r.to_annotated()).collect();
    let mut provider = PrecomputedProvider::new();
    for rec in &records {
        provider.insert_image(&rec.id, rec.size);
        provider
            .insert_feature(&rec.id, Stage::FullImage, FeatureVector::new(vec![1.0]))
            .expect("placeholder dims agree");
    }
    Ok((records, provider))
}

/// Stages on which an index over `records` can be built: the full image
/// always, others when the stage is served and its annotation is present on
/// every record.
pub fn indexable_stages(
    records: &[AnnotatedImage],
    serves: impl Fn(&Stage) -> bool,
) -> Vec<Stage> {
    let mut stages = vec![Stage::FullImage];
    if records.iter().all(|r| r.object_box.is_some()) && serves(&Stage::ObjectCrop) {
        stages.push(Stage::ObjectCrop);
    }
    let mut names: Vec<&String> = records.iter().flat_map(|r| r.part_boxes.keys()).collect();
    names.sort();
    names.dedup();
    for name in names {
        let stage = Stage::part(name);
        let annotated = records
            .iter()
            .all(|r| matches!(r.part_boxes.get(name.as_str()), Some(Some(_))));
        if annotated && serves(&stage) {
            stages.push(stage);
        }
    }
    stages
}

fn require_raster_dir<'a>(parsed: &Parsed, raster_dir: Option<&'a Path>) -> Result<&'a Path> {
    raster_dir.ok_or_else(|| {
        anyhow!(
            "{}: records carry no feature references; pass --raster-dir to read graymaps",
            parsed.path.display()
        )
    })
}

fn add_precomputed(provider: &mut PrecomputedProvider, parsed: &Parsed) -> Result<()> {
    let base = parsed.path.parent().unwrap_or(Path::new("."));
    let mut files: HashMap<PathBuf, fvec::FvecFile> = HashMap::new();
    let mut first_file: Option<(PathBuf, usize)> = None;
    for (line, record) in &parsed.rows {
        provider.insert_image(&record.id, ImageSize::new(record.width, record.height));
        let refs = record.features.as_ref().expect("uniformity checked by parse");
        if refs.is_empty() {
            bail!(
                "{} line {line}: record `{}` has an empty feature map",
                parsed.path.display(),
                record.id
            );
        }
        for (stage_name, fref) in refs {
            let stage = Stage::from_str(stage_name).map_err(|e| {
                anyhow!("{} line {line}: record `{}`: {e}", parsed.path.display(), record.id)
            })?;
            let values: Vec<f64> = match fref {
                FeatureRef::Inline(values) => values.clone(),
                FeatureRef::File { file, row } => {
                    let path = base.join(file);
                    if !files.contains_key(&path) {
                        let data = fvec::read(&path)?;
                        match &first_file {
                            None => first_file = Some((path.clone(), data.dim())),
                            Some((first, dim)) if *dim != data.dim() => bail!(
                                "{} holds dim-{} vectors but {} holds dim-{}",
                                path.display(),
                                data.dim(),
                                first.display(),
                                dim
                            ),
                            Some(_) => {}
                        }
                        files.insert(path.clone(), data);
                    }
                    let data = &files[&path];
                    data.row(*row)
                        .ok_or_else(|| {
                            anyhow!(
                                "{} line {line}: record `{}` wants row {row} of {} which holds \
                                 {} vectors",
                                parsed.path.display(),
                                record.id,
                                path.display(),
                                data.count()
                            )
                        })?
                        .iter()
                        .map(|v| f64::from(*v))
                        .collect()
                }
            };
            provider
                .insert_feature(&record.id, stage, FeatureVector::new(values))
                .map_err(|e| {
                    anyhow!("{} line {line}: record `{}`: {e}", parsed.path.display(), record.id)
                })?;
        }
    }
    Ok(())
}

fn add_rasters(provider: &mut RasterProvider, dir: &Path, parsed: &Parsed) -> Result<()> {
    for (line, record) in &parsed.rows {
        let path = dir.join(format!("{}.pgm", record.id));
        let image = pgm::read(&path)
            .with_context(|| format!("manifest line {line}: record `{}`", record.id))?;
        let size = image.size();
        if size.width != record.width || size.height != record.height {
            bail!(
                "record `{}`: manifest frame {}x{} disagrees with graymap {}x{}",
                record.id,
                record.width,
                record.height,
                size.width,
                size.height
            );
        }
        provider.insert_image(&record.id, image);
    }
    Ok(())
}

fn common_stages(provider: &PrecomputedProvider, records: &[AnnotatedImage]) -> Vec<Stage> {
    let mut common: Option<Vec<Stage>> = None;
    for rec in records {
        let stages: Vec<Stage> = match provider.stages_of(&rec.id) {
            Some(it) => it.cloned().collect(),
            None => Vec::new(),
        };
        common = Some(match common {
            None => stages,
            Some(prev) => prev.into_iter().filter(|s| stages.contains(s)).collect(),
        });
    }
    common.unwrap_or_default()
}
