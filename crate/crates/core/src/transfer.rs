//! Nonparametric box transfer: fuse annotations of retrieved neighbors in
//! the unit square, map the result into the query frame, and iterate by
//! re-describing the current crop against training objects cropped the same
//! way. Covers the object level, the training-set crop rebuild, and the
//! part level inside a fixed object crop.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::features::{
    DistanceMetric, FeatureError, FeatureProvider, FeatureVector, Stage,
};
use crate::geometry::{
    clamp_box, fuse_boxes, iou, map_box, BoundingBox, FusionMode, GeometryError, ImageSize,
};
use crate::index::{knn_over_rows, IndexError, TrainingIndex};
use crate::recognition::{decision_values, ClassifierModel, RecognitionError};

/// Knobs shared by every transfer operation. `metric` must agree with the
/// index or cropped set being queried; the mismatch is an error, never a
/// silent override.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    /// Neighbors retrieved per step.
    pub m: usize,
    pub fusion: FusionMode,
    pub max_iters: usize,
    /// Consecutive boxes at least this similar stop the iteration.
    pub stability_iou: f64,
    /// Enables classifier-score termination when set and a model is given.
    pub score_threshold: Option<f64>,
    pub metric: DistanceMetric,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            m: 2,
            fusion: FusionMode::Union,
            max_iters: 3,
            stability_iou: 0.9,
            score_threshold: None,
            metric: DistanceMetric::Cosine,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<(), TransferError> {
        if self.m == 0 {
            return Err(TransferError::BadConfig("neighbor count must be positive"));
        }
        if self.max_iters == 0 {
            return Err(TransferError::BadConfig("iteration limit must be positive"));
        }
        if !(self.stability_iou > 0.0 && self.stability_iou <= 1.0) {
            return Err(TransferError::BadConfig("stability threshold must be in (0, 1]"));
        }
        if let Some(s) = self.score_threshold {
            if !s.is_finite() {
                return Err(TransferError::BadConfig("score threshold must be finite"));
            }
        }
        Ok(())
    }
}

/// Why an iterative localization stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationReason {
    /// Consecutive boxes overlapped at least `stability_iou`.
    Stability,
    /// The classifier score on the current crop cleared the threshold.
    ClassifierScore,
    /// The iteration budget ran out.
    MaxIters,
    /// The next refinement stage could not be served.
    StageExhausted,
}

impl TerminationReason {
    pub fn name(&self) -> &'static str {
        match self {
            TerminationReason::Stability => "stability",
            TerminationReason::ClassifierScore => "classifier-score",
            TerminationReason::MaxIters => "max-iters",
            TerminationReason::StageExhausted => "stage-exhausted",
        }
    }
}

impl core::str::FromStr for TerminationReason {
    type Err = TransferError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stability" => Ok(TerminationReason::Stability),
            "classifier-score" => Ok(TerminationReason::ClassifierScore),
            "max-iters" => Ok(TerminationReason::MaxIters),
            "stage-exhausted" => Ok(TerminationReason::StageExhausted),
            _ => Err(TransferError::BadConfig("unknown termination reason")),
        }
    }
}

impl core::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// One retrieved neighbor as recorded in a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborRef {
    pub id: String,
    pub distance: f64,
}

/// One refinement round: the fused box in input-image coordinates and the
/// neighbors that produced it (including any skipped for missing boxes).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub bbox: BoundingBox,
    pub neighbors: Vec<NeighborRef>,
}

/// Audit record of a full localization run. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferTrace {
    pub iterations: Vec<IterationRecord>,
    pub reason: TerminationReason,
}

impl TransferTrace {
    pub fn len(&self) -> usize {
        self.iterations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    pub fn final_box(&self) -> BoundingBox {
        self.iterations.last().expect("trace is never empty").bbox
    }
}

/// Which annotation a step transfers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxField<'a> {
    Object,
    Part(&'a str),
}

/// One training record rebuilt around its adjusted crop. Boxes stay in
/// input-image coordinates of the original training image.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedRecord {
    pub id: String,
    /// Adjusted crop; always contains `object_box`.
    pub crop: BoundingBox,
    pub object_box: BoundingBox,
    pub part_boxes: BTreeMap<String, Option<BoundingBox>>,
}

/// Training objects re-described on their adjusted crops, retrievable by the
/// object-stage feature computed on each crop.
#[derive(Debug, Clone, PartialEq)]
pub struct CroppedTrainingSet {
    records: Vec<CroppedRecord>,
    features: Vec<FeatureVector>,
    metric: DistanceMetric,
    dim: usize,
}

impl CroppedTrainingSet {
    pub fn from_parts(
        records: Vec<CroppedRecord>,
        features: Vec<FeatureVector>,
        metric: DistanceMetric,
    ) -> Result<Self, TransferError> {
        if records.is_empty() {
            return Err(TransferError::EmptyCroppedSet);
        }
        if records.len() != features.len() {
            return Err(TransferError::MismatchedLengths {
                records: records.len(),
                features: features.len(),
            });
        }
        let dim = features[0].dim();
        for f in &features {
            if f.dim() != dim {
                return Err(TransferError::Feature(FeatureError::DimMismatch {
                    left: dim,
                    right: f.dim(),
                }));
            }
        }
        for (i, r) in records.iter().enumerate() {
            if records[..i].iter().any(|seen| seen.id == r.id) {
                return Err(TransferError::DuplicateId(r.id.clone()));
            }
            if !(r.crop.is_finite() && r.crop.w > 0.0 && r.crop.h > 0.0) {
                return Err(TransferError::Geometry(GeometryError::NonFiniteBox));
            }
            // Containment up to rounding; a hull-built crop can sit an ulp
            // inside its object's true far edge.
            let tol = 1e-9
                * r.crop.x.abs().max(r.crop.y.abs()).max(r.crop.w).max(r.crop.h).max(1.0);
            let o = r.object_box;
            let misses = o.x < r.crop.x - tol
                || o.y < r.crop.y - tol
                || o.right() > r.crop.right() + tol
                || o.bottom() > r.crop.bottom() + tol;
            if misses {
                return Err(TransferError::CropMissesObject { id: r.id.clone() });
            }
        }
        Ok(Self { records, features, metric, dim })
    }

    pub fn records(&self) -> &[CroppedRecord] {
        &self.records
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    /// Sorted names of all parts any record annotates.
    pub fn part_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.records.iter().flat_map(|r| r.part_boxes.keys().cloned()).collect();
        names.sort();
        names.dedup();
        names
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransferError {
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Recognition(#[from] RecognitionError),
    #[error("every retrieved neighbor lacks the requested box")]
    NoAnnotatedNeighbors,
    #[error("bad transfer config: {0}")]
    BadConfig(&'static str),
    #[error("cropped training set is empty")]
    EmptyCroppedSet,
    #[error("record `{id}` has no object box")]
    MissingObjectBox { id: String },
    #[error("crop of record `{id}` does not contain its object box")]
    CropMissesObject { id: String },
    #[error("{records} records but {features} features")]
    MismatchedLengths { records: usize, features: usize },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("config metric {config} does not match data metric {data}")]
    MetricMismatch { config: DistanceMetric, data: DistanceMetric },
}

fn check_metric(config: DistanceMetric, data: DistanceMetric) -> Result<(), TransferError> {
    if config == data {
        Ok(())
    } else {
        Err(TransferError::MetricMismatch { config, data })
    }
}

/// Fuse the unit-square boxes of annotated neighbors; `None` entries were
/// retrieved but carry no box and are skipped.
fn fuse_unit(
    unit_boxes: &[Option<BoundingBox>],
    fusion: FusionMode,
) -> Result<BoundingBox, TransferError> {
    let present: Vec<BoundingBox> = unit_boxes.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(TransferError::NoAnnotatedNeighbors);
    }
    Ok(fuse_boxes(&present, fusion)?)
}

fn index_step(
    query: &FeatureVector,
    frame: ImageSize,
    index: &TrainingIndex,
    stage: &Stage,
    field: BoxField<'_>,
    cfg: &TransferConfig,
    exclude: Option<&str>,
) -> Result<(BoundingBox, Vec<NeighborRef>), TransferError> {
    let rows = index
        .stage_rows(stage)
        .ok_or_else(|| IndexError::StageMissing(stage.clone()))?;
    let excluded = exclude.and_then(|id| index.position_of(id));
    let hits = knn_over_rows(rows, cfg.metric, query, cfg.m, excluded)?;

    let mut neighbors = Vec::with_capacity(hits.len());
    let mut unit_boxes = Vec::with_capacity(hits.len());
    for hit in &hits {
        let record = &index.records()[hit.record];
        neighbors.push(NeighborRef { id: record.id.clone(), distance: hit.distance });
        let b = match field {
            BoxField::Object => record.object_box,
            BoxField::Part(name) => record.part_boxes.get(name).copied().flatten(),
        };
        unit_boxes.push(match b {
            Some(b) => Some(map_box(b, record.size, ImageSize::UNIT)?),
            None => None,
        });
    }
    let fused = fuse_unit(&unit_boxes, cfg.fusion)?;
    let out = clamp_box(map_box(fused, ImageSize::UNIT, frame)?, frame)?;
    Ok((out, neighbors))
}

/// Map each annotated neighbor's box through its own crop into the unit
/// square, fuse, and express the result in a `to`-sized frame. The returned
/// box is not clamped; callers clamp against their own frame.
fn cropped_step(
    query: &FeatureVector,
    set: &CroppedTrainingSet,
    field: BoxField<'_>,
    cfg: &TransferConfig,
    excluded: Option<usize>,
    to: ImageSize,
) -> Result<(BoundingBox, Vec<NeighborRef>), TransferError> {
    let hits = knn_over_rows(&set.features, cfg.metric, query, cfg.m, excluded)?;

    let mut neighbors = Vec::with_capacity(hits.len());
    let mut unit_boxes = Vec::with_capacity(hits.len());
    for hit in &hits {
        let record = &set.records[hit.record];
        neighbors.push(NeighborRef { id: record.id.clone(), distance: hit.distance });
        let b = match field {
            BoxField::Object => Some(record.object_box),
            BoxField::Part(name) => record.part_boxes.get(name).copied().flatten(),
        };
        unit_boxes.push(match b {
            Some(b) => {
                let in_crop = b.translated(-record.crop.x, -record.crop.y);
                let crop_frame = ImageSize::new(record.crop.w, record.crop.h);
                Some(map_box(in_crop, crop_frame, ImageSize::UNIT)?)
            }
            None => None,
        });
    }
    let fused = fuse_unit(&unit_boxes, cfg.fusion)?;
    Ok((map_box(fused, ImageSize::UNIT, to)?, neighbors))
}

/// Single retrieval-and-fusion round against a full index. Neighbor boxes
/// are normalized by their own image frames, fused per `cfg.fusion`, mapped
/// into `frame`, and clamped to it. Neighbors without the requested box are
/// retrieved but skipped during fusion.
pub fn transfer_step(
    query: &FeatureVector,
    frame: ImageSize,
    index: &TrainingIndex,
    stage: &Stage,
    field: BoxField<'_>,
    cfg: &TransferConfig,
    exclude: Option<&str>,
) -> Result<BoundingBox, TransferError> {
    cfg.validate()?;
    check_metric(cfg.metric, index.metric())?;
    Ok(index_step(query, frame, index, stage, field, cfg, exclude)?.0)
}

/// [`transfer_step`] against a cropped training set: neighbor boxes are
/// normalized by their adjusted crops instead of whole image frames, and the
/// fused box lands in a frame of size `to` (a crop treated as its own small
/// image), clamped to it.
pub fn transfer_step_cropped(
    query: &FeatureVector,
    to: ImageSize,
    set: &CroppedTrainingSet,
    field: BoxField<'_>,
    cfg: &TransferConfig,
    exclude: Option<&str>,
) -> Result<BoundingBox, TransferError> {
    cfg.validate()?;
    check_metric(cfg.metric, set.metric)?;
    let excluded = exclude.and_then(|id| set.position_of(id));
    let (b, _) = cropped_step(query, set, field, cfg, excluded, to)?;
    Ok(clamp_box(b, to)?)
}

/// Object localization with iterative refinement.
///
/// Round 1 matches the query's full-image feature against the index and
/// fuses neighbor object boxes. Later rounds re-describe the current crop,
/// match against `cropped`, and compose the fused box back into input-image
/// coordinates. Stops on box stability, on a classifier score clearing
/// `cfg.score_threshold`, on the iteration budget, or when the next stage
/// cannot be served. The query id is always excluded from retrieval, so
/// training images can be localized leave-one-out with no extra flag.
pub fn iterative_localize(
    image_id: &str,
    provider: &dyn FeatureProvider,
    index: &TrainingIndex,
    cropped: Option<&CroppedTrainingSet>,
    cfg: &TransferConfig,
    raw_classifier: Option<&ClassifierModel>,
) -> Result<(BoundingBox, TransferTrace), TransferError> {
    cfg.validate()?;
    check_metric(cfg.metric, index.metric())?;
    if let Some(set) = cropped {
        check_metric(cfg.metric, set.metric)?;
    }
    let frame = provider.image_size(image_id)?;
    let full = provider.feature(image_id, frame.frame_box(), &Stage::FullImage)?;
    let (first, neighbors) = index_step(
        &full,
        frame,
        index,
        &Stage::FullImage,
        BoxField::Object,
        cfg,
        Some(image_id),
    )?;
    let mut current = first;
    let mut iterations = vec![IterationRecord { bbox: current, neighbors }];

    let reason = loop {
        let done = iterations.len();
        if done >= cfg.max_iters {
            break TerminationReason::MaxIters;
        }
        // A provider serving fixed per-stage vectors has exactly one crop
        // description to offer; a third round would reuse the second's
        // feature verbatim.
        if done + 1 >= 3 && !provider.recomputes_crops() {
            break TerminationReason::StageExhausted;
        }
        let can_score = raw_classifier.is_some() && cfg.score_threshold.is_some();
        if cropped.is_none() && !can_score {
            break TerminationReason::StageExhausted;
        }
        let feature = match provider.feature(image_id, current, &Stage::ObjectCrop) {
            Ok(f) => f,
            Err(FeatureError::StageUnavailable { .. }) => break TerminationReason::StageExhausted,
            Err(e) => return Err(e.into()),
        };
        if let (Some(model), Some(threshold)) = (raw_classifier, cfg.score_threshold) {
            let scores = decision_values(model, &feature)?;
            let best = scores.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            if best > threshold {
                break TerminationReason::ClassifierScore;
            }
        }
        let Some(set) = cropped else {
            break TerminationReason::StageExhausted;
        };
        let excluded = set.position_of(image_id);
        let crop_frame = ImageSize::new(current.w, current.h);
        let (in_crop, neighbors) =
            cropped_step(&feature, set, BoxField::Object, cfg, excluded, crop_frame)?;
        let next = clamp_box(in_crop.translated(current.x, current.y), frame)?;
        let prev = current;
        current = next;
        iterations.push(IterationRecord { bbox: current, neighbors });
        if iou(current, prev) >= cfg.stability_iou {
            break TerminationReason::Stability;
        }
    };

    Ok((current, TransferTrace { iterations, reason }))
}

/// Build the cropped training set: each record gets a leave-one-out
/// transferred crop, widened to the smallest box that also contains its
/// ground-truth object box, and is re-described on that crop.
pub fn rebuild_training_crops(
    index: &TrainingIndex,
    provider: &dyn FeatureProvider,
    cfg: &TransferConfig,
) -> Result<CroppedTrainingSet, TransferError> {
    cfg.validate()?;
    check_metric(cfg.metric, index.metric())?;
    let rows = index
        .stage_rows(&Stage::FullImage)
        .ok_or(IndexError::StageMissing(Stage::FullImage))?;

    let mut truths = Vec::with_capacity(index.len());
    for rec in index.records() {
        truths.push(
            rec.object_box
                .ok_or_else(|| TransferError::MissingObjectBox { id: rec.id.clone() })?,
        );
    }

    let mut records = Vec::with_capacity(index.len());
    let mut features = Vec::with_capacity(index.len());
    for (pos, rec) in index.records().iter().enumerate() {
        let truth = truths[pos];
        let (predicted, _) = index_step(
            &rows[pos],
            rec.size,
            index,
            &Stage::FullImage,
            BoxField::Object,
            cfg,
            Some(&rec.id),
        )?;
        let crop = predicted.hull(&truth);
        let feature = provider.feature(&rec.id, crop, &Stage::ObjectCrop)?;
        records.push(CroppedRecord {
            id: rec.id.clone(),
            crop,
            object_box: truth,
            part_boxes: rec.part_boxes.clone(),
        });
        features.push(feature);
    }
    CroppedTrainingSet::from_parts(records, features, cfg.metric)
}

/// Part localization inside a fixed object crop.
///
/// The object crop's feature retrieves neighbors among cropped training
/// objects; their part boxes, normalized by their own crops, are fused and
/// mapped into the query's object crop. Later rounds only swap the query
/// feature for one computed on the current part crop; fusion output stays
/// anchored to the object crop, so parts never escape it. A part all
/// retrieved neighbors lack is reported as `None`.
pub fn localize_parts(
    object_box: BoundingBox,
    image_id: &str,
    provider: &dyn FeatureProvider,
    cropped: &CroppedTrainingSet,
    part_names: &[String],
    cfg: &TransferConfig,
) -> Result<BTreeMap<String, Option<(BoundingBox, TransferTrace)>>, TransferError> {
    cfg.validate()?;
    check_metric(cfg.metric, cropped.metric)?;
    let frame = provider.image_size(image_id)?;
    let crop = clamp_box(object_box, frame)?;
    let crop_frame = ImageSize::new(crop.w, crop.h);
    let object_feature = provider.feature(image_id, crop, &Stage::ObjectCrop)?;
    let excluded = cropped.position_of(image_id);

    let mut out = BTreeMap::new();
    for name in part_names {
        let entry = localize_one_part(
            name,
            crop,
            crop_frame,
            image_id,
            provider,
            &object_feature,
            cropped,
            excluded,
            cfg,
        )?;
        out.insert(name.clone(), entry);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn localize_one_part(
    name: &str,
    crop: BoundingBox,
    crop_frame: ImageSize,
    image_id: &str,
    provider: &dyn FeatureProvider,
    object_feature: &FeatureVector,
    set: &CroppedTrainingSet,
    excluded: Option<usize>,
    cfg: &TransferConfig,
) -> Result<Option<(BoundingBox, TransferTrace)>, TransferError> {
    let first = match cropped_step(
        object_feature,
        set,
        BoxField::Part(name),
        cfg,
        excluded,
        crop_frame,
    ) {
        Ok(v) => v,
        Err(TransferError::NoAnnotatedNeighbors) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut current = clamp_box(first.0, crop_frame)?;
    let mut iterations = vec![IterationRecord {
        bbox: current.translated(crop.x, crop.y),
        neighbors: first.1,
    }];

    let reason = loop {
        let done = iterations.len();
        if done >= cfg.max_iters {
            break TerminationReason::MaxIters;
        }
        if done + 1 >= 3 && !provider.recomputes_crops() {
            break TerminationReason::StageExhausted;
        }
        let part_region = current.translated(crop.x, crop.y);
        let stage = Stage::PartCrop(name.to_string());
        let feature = match provider.feature(image_id, part_region, &stage) {
            Ok(f) => f,
            Err(FeatureError::StageUnavailable { .. }) => break TerminationReason::StageExhausted,
            Err(e) => return Err(e.into()),
        };
        let step = match cropped_step(
            &feature,
            set,
            BoxField::Part(name),
            cfg,
            excluded,
            crop_frame,
        ) {
            Ok(v) => v,
            // The re-described query retrieved only unannotated neighbors;
            // keep the box found so far.
            Err(TransferError::NoAnnotatedNeighbors) => break TerminationReason::StageExhausted,
            Err(e) => return Err(e),
        };
        let next = clamp_box(step.0, crop_frame)?;
        let prev = current;
        current = next;
        iterations.push(IterationRecord {
            bbox: current.translated(crop.x, crop.y),
            neighbors: step.1,
        });
        if iou(current, prev) >= cfg.stability_iou {
            break TerminationReason::Stability;
        }
    };

    let final_box = current.translated(crop.x, crop.y);
    Ok(Some((final_box, TransferTrace { iterations, reason })))
}
