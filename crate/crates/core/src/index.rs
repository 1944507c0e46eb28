//! Annotated training images bundled with per-stage feature matrices, plus
//! the exact nearest-neighbor scan the transfer pipeline retrieves from.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::features::{
    distance, DistanceMetric, FeatureError, FeatureProvider, FeatureVector, Stage,
};
use crate::geometry::{BoundingBox, ImageSize};

/// One dataset record: identity, frame, optional label, box annotations.
///
/// A part mapped to `None` was annotated as absent (e.g. occluded), which is
/// distinct from the part name not appearing at all.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub id: String,
    pub size: ImageSize,
    pub class_label: Option<String>,
    pub object_box: Option<BoundingBox>,
    pub part_boxes: BTreeMap<String, Option<BoundingBox>>,
}

impl AnnotatedImage {
    pub fn new(id: &str, size: ImageSize) -> Self {
        Self {
            id: id.to_string(),
            size,
            class_label: None,
            object_box: None,
            part_boxes: BTreeMap::new(),
        }
    }

    pub fn with_class(mut self, label: &str) -> Self {
        self.class_label = Some(label.to_string());
        self
    }

    pub fn with_object_box(mut self, b: BoundingBox) -> Self {
        self.object_box = Some(b);
        self
    }

    pub fn with_part(mut self, name: &str, b: Option<BoundingBox>) -> Self {
        self.part_boxes.insert(name.to_string(), b);
        self
    }
}

/// Immutable searchable collection of training records.
///
/// Invariants established at build time: at least one record, unique ids,
/// every annotation box valid within its frame, one feature row per record
/// for every carried stage, all rows of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingIndex {
    records: Vec<AnnotatedImage>,
    by_id: BTreeMap<String, usize>,
    features: BTreeMap<Stage, Vec<FeatureVector>>,
    dim: usize,
    metric: DistanceMetric,
}

impl TrainingIndex {
    pub fn records(&self) -> &[AnnotatedImage] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn stages(&self) -> impl Iterator<Item = &Stage> {
        self.features.keys()
    }

    pub fn stage_rows(&self, stage: &Stage) -> Option<&[FeatureVector]> {
        self.features.get(stage).map(Vec::as_slice)
    }

    /// Sorted union of part names annotated anywhere in the index.
    pub fn part_names(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for r in &self.records {
            for name in r.part_boxes.keys() {
                names.insert(name.clone());
            }
        }
        names.into_iter().collect()
    }

    /// Sorted distinct class labels present in the index.
    pub fn class_labels(&self) -> Vec<String> {
        let mut labels = BTreeSet::new();
        for r in &self.records {
            if let Some(l) = &r.class_label {
                labels.insert(l.clone());
            }
        }
        labels.into_iter().collect()
    }
}

/// Retrieval result: a record position in the source collection and its
/// distance from the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub record: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero records")]
    EmptyIndex,
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("record `{id}`: invalid frame size")]
    InvalidSize { id: String },
    #[error("record `{id}`: {what} must have positive extents and lie inside the frame")]
    InvalidAnnotation { id: String, what: String },
    #[error("record `{id}` lacks the annotation required for stage `{stage}`")]
    MissingStageRegion { id: String, stage: Stage },
    #[error("an index must carry the full-image stage")]
    MissingFullStage,
    #[error("index does not carry stage `{0}`")]
    StageMissing(Stage),
    #[error("m must satisfy 1 <= m <= {available}, got {requested}")]
    BadM { requested: usize, available: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

fn box_valid_in(b: &BoundingBox, size: ImageSize) -> bool {
    b.is_finite()
        && b.w > 0.0
        && b.h > 0.0
        && b.x >= 0.0
        && b.y >= 0.0
        && b.right() <= size.width
        && b.bottom() <= size.height
}

fn validate_record(r: &AnnotatedImage) -> Result<(), IndexError> {
    if !r.size.is_valid() {
        return Err(IndexError::InvalidSize { id: r.id.clone() });
    }
    if let Some(b) = &r.object_box {
        if !box_valid_in(b, r.size) {
            return Err(IndexError::InvalidAnnotation {
                id: r.id.clone(),
                what: "object box".to_string(),
            });
        }
    }
    for (name, b) in &r.part_boxes {
        if let Some(b) = b {
            if !box_valid_in(b, r.size) {
                return Err(IndexError::InvalidAnnotation {
                    id: r.id.clone(),
                    what: alloc::format!("part `{name}` box"),
                });
            }
        }
    }
    Ok(())
}

/// Region handed to the provider when pulling a stage row for a record.
fn stage_region(r: &AnnotatedImage, stage: &Stage) -> Result<BoundingBox, IndexError> {
    match stage {
        Stage::FullImage => Ok(r.size.frame_box()),
        Stage::ObjectCrop => r.object_box.ok_or_else(|| IndexError::MissingStageRegion {
            id: r.id.clone(),
            stage: stage.clone(),
        }),
        Stage::PartCrop(name) => match r.part_boxes.get(name) {
            Some(Some(b)) => Ok(*b),
            _ => Err(IndexError::MissingStageRegion { id: r.id.clone(), stage: stage.clone() }),
        },
    }
}

/// Validate records and pull one feature row per record for each requested
/// stage. The full-image stage is mandatory; a stage a record cannot serve is
/// a build error (stages must be uniformly present, never silently partial).
pub fn build_index(
    records: Vec<AnnotatedImage>,
    provider: &dyn FeatureProvider,
    stages: &[Stage],
    metric: DistanceMetric,
) -> Result<TrainingIndex, IndexError> {
    if records.is_empty() {
        return Err(IndexError::EmptyIndex);
    }
    if !stages.contains(&Stage::FullImage) {
        return Err(IndexError::MissingFullStage);
    }

    let mut by_id = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        validate_record(r)?;
        if by_id.insert(r.id.clone(), i).is_some() {
            return Err(IndexError::DuplicateId(r.id.clone()));
        }
    }

    let mut features: BTreeMap<Stage, Vec<FeatureVector>> = BTreeMap::new();
    let mut dim = 0usize;
    for stage in stages {
        if features.contains_key(stage) {
            continue;
        }
        let mut rows = Vec::with_capacity(records.len());
        for r in &records {
            let region = stage_region(r, stage)?;
            let row = provider.feature(&r.id, region, stage)?;
            if dim == 0 {
                dim = row.dim();
            } else if row.dim() != dim {
                return Err(FeatureError::DimMismatch { left: dim, right: row.dim() }.into());
            }
            rows.push(row);
        }
        features.insert(stage.clone(), rows);
    }

    Ok(TrainingIndex { records, by_id, features, dim, metric })
}

/// Exact k-nearest-neighbor selection over a row set: ascending distance,
/// ties broken toward the earlier row. Shared by the index and the cropped
/// training set.
pub(crate) fn knn_over_rows(
    rows: &[FeatureVector],
    metric: DistanceMetric,
    query: &FeatureVector,
    m: usize,
    excluded: Option<usize>,
) -> Result<Vec<Neighbor>, IndexError> {
    let available = rows.len() - usize::from(excluded.is_some());
    if m == 0 || m > available {
        return Err(IndexError::BadM { requested: m, available });
    }

    struct Entry {
        distance: f64,
        pos: usize,
    }
    impl PartialEq for Entry {
        fn eq(&self, other: &Self) -> bool {
            self.cmp(other) == core::cmp::Ordering::Equal
        }
    }
    impl Eq for Entry {}
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> core::cmp::Ordering {
            self.distance.total_cmp(&other.distance).then(self.pos.cmp(&other.pos))
        }
    }

    // Bounded max-heap of the current best m; the worst candidate sits on top.
    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(m + 1);
    for (pos, row) in rows.iter().enumerate() {
        if Some(pos) == excluded {
            continue;
        }
        let d = distance(metric, query, row)?;
        let entry = Entry { distance: d, pos };
        if heap.len() < m {
            heap.push(entry);
        } else if let Some(worst) = heap.peek() {
            if entry.cmp(worst) == core::cmp::Ordering::Less {
                heap.pop();
                heap.push(entry);
            }
        }
    }

    let sorted = heap.into_sorted_vec();
    Ok(sorted.into_iter().map(|e| Neighbor { record: e.pos, distance: e.distance }).collect())
}

/// The `m` nearest records to `query` under the index metric at `stage`,
/// ascending by distance with ties broken toward the earlier record.
/// `exclude` removes one record by id (leave-one-out); an id not present in
/// the index is a no-op.
pub fn knn(
    index: &TrainingIndex,
    query: &FeatureVector,
    stage: &Stage,
    m: usize,
    exclude: Option<&str>,
) -> Result<Vec<Neighbor>, IndexError> {
    let rows = index
        .features
        .get(stage)
        .ok_or_else(|| IndexError::StageMissing(stage.clone()))?;
    let excluded = exclude.and_then(|id| index.position_of(id));
    knn_over_rows(rows, index.metric, query, m, excluded)
}
