//! Localization and recognition metrics: per-region percentage of correct
//! localizations across IoU thresholds, and classification accuracy.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geometry::{iou, BoundingBox};
use crate::index::TrainingIndex;

/// Region name that addresses a record's object box instead of a named part.
pub const OBJECT_REGION: &str = "object";

/// Whether a sample at exactly the threshold counts as a hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HitRule {
    /// Hit iff `iou >= threshold`.
    #[default]
    Closed,
    /// Hit iff `iou > threshold`. Differs only on the boundary.
    Strict,
}

impl HitRule {
    fn is_hit(self, overlap: f64, threshold: f64) -> bool {
        match self {
            HitRule::Closed => overlap >= threshold,
            HitRule::Strict => overlap > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluationError {
    #[error("threshold list is empty")]
    EmptyThresholds,
    #[error("threshold {0} is outside (0, 1]")]
    BadThreshold(f64),
    #[error("id `{0}` is not in the ground-truth index")]
    UnknownId(String),
    #[error("image `{0}` has no class label")]
    UnlabeledImage(String),
    #[error("no predictions to score")]
    EmptyPredictions,
}

/// Hit percentages for one region across the report's thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPcp {
    pub region: String,
    /// Samples scored against a ground-truth box.
    pub evaluated: usize,
    /// Samples left out: ground truth absent, or prediction absent while
    /// absences are not counted as misses.
    pub skipped: usize,
    /// Percentage of evaluated samples that hit, parallel to the report's
    /// threshold list.
    pub percentages: Vec<f64>,
}

/// Correct-localization percentages per region and threshold.
///
/// For every region, `evaluated + skipped` equals the number of prediction
/// records, and percentages are non-increasing as the threshold grows.
#[derive(Debug, Clone, PartialEq)]
pub struct PcpReport {
    thresholds: Vec<f64>,
    regions: Vec<RegionPcp>,
}

impl PcpReport {
    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Rows in sorted region-name order.
    pub fn regions(&self) -> &[RegionPcp] {
        &self.regions
    }

    pub fn region(&self, name: &str) -> Option<&RegionPcp> {
        self.regions.iter().find(|r| r.region == name)
    }

    /// Percentage for a region at the i-th threshold of the report.
    pub fn percentage(&self, region: &str, threshold_idx: usize) -> Option<f64> {
        self.region(region)?.percentages.get(threshold_idx).copied()
    }
}

/// Predictions keyed by image id, then region name (`"object"` addresses the
/// object box). `None` marks a region the localizer reported absent.
pub type RegionPredictions = BTreeMap<String, BTreeMap<String, Option<BoundingBox>>>;

fn truth_box(index: &TrainingIndex, pos: usize, region: &str) -> Option<BoundingBox> {
    let rec = &index.records()[pos];
    if region == OBJECT_REGION {
        rec.object_box
    } else {
        rec.part_boxes.get(region).copied().flatten()
    }
}

/// Score predictions with the default closed hit rule, skipping absent
/// predictions.
pub fn pcp(
    predictions: &RegionPredictions,
    ground_truth: &TrainingIndex,
    thresholds: &[f64],
) -> Result<PcpReport, EvaluationError> {
    pcp_with(predictions, ground_truth, thresholds, HitRule::default(), false)
}

/// Score predictions region by region.
///
/// A sample is skipped when the ground truth lacks the region; a sample whose
/// prediction is absent is skipped too unless `count_absent_as_miss` turns it
/// into an evaluated miss. Thresholds keep their given order in the report.
pub fn pcp_with(
    predictions: &RegionPredictions,
    ground_truth: &TrainingIndex,
    thresholds: &[f64],
    rule: HitRule,
    count_absent_as_miss: bool,
) -> Result<PcpReport, EvaluationError> {
    if thresholds.is_empty() {
        return Err(EvaluationError::EmptyThresholds);
    }
    for t in thresholds {
        if !(t.is_finite() && *t > 0.0 && *t <= 1.0) {
            return Err(EvaluationError::BadThreshold(*t));
        }
    }
    let mut positions = BTreeMap::new();
    for id in predictions.keys() {
        let pos = ground_truth
            .position_of(id)
            .ok_or_else(|| EvaluationError::UnknownId(id.clone()))?;
        positions.insert(id.as_str(), pos);
    }

    let mut region_names: Vec<String> =
        predictions.values().flat_map(|m| m.keys().cloned()).collect();
    region_names.sort();
    region_names.dedup();

    let total = predictions.len();
    let mut regions = Vec::with_capacity(region_names.len());
    for name in region_names {
        let mut evaluated = 0usize;
        let mut hits = alloc::vec![0usize; thresholds.len()];
        for (id, per_region) in predictions {
            let Some(truth) = truth_box(ground_truth, positions[id.as_str()], &name) else {
                continue;
            };
            match per_region.get(&name).copied().flatten() {
                Some(predicted) => {
                    evaluated += 1;
                    let overlap = iou(predicted, truth);
                    for (i, tau) in thresholds.iter().enumerate() {
                        if rule.is_hit(overlap, *tau) {
                            hits[i] += 1;
                        }
                    }
                }
                None if count_absent_as_miss => evaluated += 1,
                None => {}
            }
        }
        let percentages = hits
            .iter()
            .map(|h| if evaluated == 0 { 0.0 } else { 100.0 * *h as f64 / evaluated as f64 })
            .collect();
        regions.push(RegionPcp {
            region: name,
            evaluated,
            skipped: total - evaluated,
            percentages,
        });
    }

    Ok(PcpReport { thresholds: thresholds.to_vec(), regions })
}

/// Percentage of ids whose predicted class matches the ground-truth label.
pub fn accuracy(
    predictions: &BTreeMap<String, String>,
    ground_truth: &TrainingIndex,
) -> Result<f64, EvaluationError> {
    if predictions.is_empty() {
        return Err(EvaluationError::EmptyPredictions);
    }
    let mut correct = 0usize;
    for (id, predicted) in predictions {
        let pos = ground_truth
            .position_of(id)
            .ok_or_else(|| EvaluationError::UnknownId(id.clone()))?;
        let truth = ground_truth.records()[pos]
            .class_label
            .as_ref()
            .ok_or_else(|| EvaluationError::UnlabeledImage(id.clone()))?;
        if truth == predicted {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / predictions.len() as f64)
}
