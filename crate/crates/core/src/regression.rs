//! Ridge-regressed bounding-box refinement: encode proposal-to-truth offsets
//! as scale-invariant targets, fit per-class per-target linear models in
//! closed form, and decode predicted offsets back into boxes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::features::FeatureVector;
use crate::fmath;
use crate::geometry::BoundingBox;
use crate::linalg::solve_spd;

/// How proposal-to-truth offsets are parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetConvention {
    /// Positions normalized by the proposal's width/height, sizes as log
    /// ratios. Matches the decode transform exactly.
    #[default]
    SizeNormalized,
    /// Positions divided by the proposal's own x/y coordinate. Kept for
    /// comparison; needs nonzero proposal coordinates and has no
    /// scale-invariance story. Decode inverts this same encoding.
    LiteralCoordinate,
}

impl TargetConvention {
    pub fn name(&self) -> &'static str {
        match self {
            TargetConvention::SizeNormalized => "size-normalized",
            TargetConvention::LiteralCoordinate => "literal-coordinate",
        }
    }
}

impl core::str::FromStr for TargetConvention {
    type Err = RegressionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "size-normalized" => Ok(TargetConvention::SizeNormalized),
            "literal-coordinate" => Ok(TargetConvention::LiteralCoordinate),
            other => Err(RegressionError::UnknownConvention(other.to_string())),
        }
    }
}

impl core::fmt::Display for TargetConvention {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressionError {
    #[error("no training pairs to fit")]
    EmptyTraining,
    #[error("ridge lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("feature dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("box extents must be positive to encode regression targets")]
    NonPositiveBox,
    #[error("literal-coordinate targets need nonzero proposal x and y")]
    ZeroDenominator,
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("normal equations were not positive definite")]
    NumericalFailure,
    #[error("unknown target convention `{0}`")]
    UnknownConvention(String),
    #[error("model weights malformed: {0}")]
    MalformedModel(&'static str),
}

/// Offsets that carry a proposal box onto a ground-truth box, under the
/// default size-normalized convention. Order: (x, y, w, h).
pub fn encode_targets(t: BoundingBox, g: BoundingBox) -> Result<[f64; 4], RegressionError> {
    encode_targets_with(TargetConvention::SizeNormalized, t, g)
}

pub fn encode_targets_with(
    convention: TargetConvention,
    t: BoundingBox,
    g: BoundingBox,
) -> Result<[f64; 4], RegressionError> {
    if t.w <= 0.0 || t.h <= 0.0 || g.w <= 0.0 || g.h <= 0.0 {
        return Err(RegressionError::NonPositiveBox);
    }
    let (dx, dy) = match convention {
        TargetConvention::SizeNormalized => ((g.x - t.x) / t.w, (g.y - t.y) / t.h),
        TargetConvention::LiteralCoordinate => {
            if t.x == 0.0 || t.y == 0.0 {
                return Err(RegressionError::ZeroDenominator);
            }
            ((g.x - t.x) / t.x, (g.y - t.y) / t.y)
        }
    };
    Ok([dx, dy, fmath::ln(g.w / t.w), fmath::ln(g.h / t.h)])
}

/// Apply predicted offsets to a proposal, inverting [`encode_targets`].
pub fn decode_box(t: BoundingBox, offsets: [f64; 4]) -> BoundingBox {
    decode_box_with(TargetConvention::SizeNormalized, t, offsets)
}

pub fn decode_box_with(
    convention: TargetConvention,
    t: BoundingBox,
    offsets: [f64; 4],
) -> BoundingBox {
    let (x, y) = match convention {
        TargetConvention::SizeNormalized => (t.w * offsets[0] + t.x, t.h * offsets[1] + t.y),
        TargetConvention::LiteralCoordinate => (t.x * offsets[0] + t.x, t.y * offsets[1] + t.y),
    };
    BoundingBox::new(x, y, t.w * fmath::exp(offsets[2]), t.h * fmath::exp(offsets[3]))
}

/// One supervision pair: the feature describes the proposal crop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub class: String,
    pub feature: FeatureVector,
    pub proposal: BoundingBox,
    pub truth: BoundingBox,
}

/// Per-class ridge models predicting the four target components.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    dim: usize,
    lambda: f64,
    convention: TargetConvention,
    weights: BTreeMap<String, [Vec<f64>; 4]>,
}

impl RegressorModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn convention(&self) -> TargetConvention {
        self.convention
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    pub fn class_count(&self) -> usize {
        self.weights.len()
    }

    /// Weight vectors for one class, ordered (x, y, w, h).
    pub fn weights_of(&self, class: &str) -> Option<&[Vec<f64>; 4]> {
        self.weights.get(class)
    }

    /// Reassemble a model from stored parts, revalidating dimensions.
    pub fn from_parts(
        dim: usize,
        lambda: f64,
        convention: TargetConvention,
        weights: BTreeMap<String, [Vec<f64>; 4]>,
    ) -> Result<Self, RegressionError> {
        if dim == 0 {
            return Err(RegressionError::MalformedModel("dimension must be positive"));
        }
        if weights.is_empty() {
            return Err(RegressionError::MalformedModel("no classes"));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(RegressionError::BadLambda(lambda));
        }
        for per_class in weights.values() {
            if per_class.iter().any(|w| w.len() != dim) {
                return Err(RegressionError::MalformedModel("weight length differs from dim"));
            }
        }
        Ok(Self { dim, lambda, convention, weights })
    }
}

/// Closed-form ridge fit under the default target convention.
pub fn fit_regressor(
    pairs: &[TrainingPair],
    lambda: f64,
) -> Result<RegressorModel, RegressionError> {
    fit_regressor_with(pairs, lambda, TargetConvention::SizeNormalized)
}

/// Closed-form ridge fit: per class and per target component, solve
/// (PhiT Phi + lambda I) w = PhiT y by a symmetric positive-definite
/// factorization. No intercept; append a constant feature component when an
/// offset term is wanted.
pub fn fit_regressor_with(
    pairs: &[TrainingPair],
    lambda: f64,
    convention: TargetConvention,
) -> Result<RegressorModel, RegressionError> {
    if pairs.is_empty() {
        return Err(RegressionError::EmptyTraining);
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(RegressionError::BadLambda(lambda));
    }
    let dim = pairs[0].feature.dim();
    for p in pairs {
        if p.feature.dim() != dim {
            return Err(RegressionError::DimMismatch { left: dim, right: p.feature.dim() });
        }
    }

    let mut by_class: BTreeMap<&str, Vec<&TrainingPair>> = BTreeMap::new();
    for p in pairs {
        by_class.entry(p.class.as_str()).or_default().push(p);
    }

    let mut weights = BTreeMap::new();
    for (class, group) in by_class {
        // A = PhiT Phi + lambda I, shared across the four targets.
        let mut a = vec![0.0f64; dim * dim];
        let mut b = [vec![0.0f64; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
        for p in &group {
            let phi = p.feature.values();
            let y = encode_targets_with(convention, p.proposal, p.truth)?;
            for i in 0..dim {
                let fi = phi[i];
                for j in 0..=i {
                    a[i * dim + j] += fi * phi[j];
                }
                for (target, bt) in b.iter_mut().enumerate() {
                    bt[i] += fi * y[target];
                }
            }
        }
        for i in 0..dim {
            a[i * dim + i] += lambda;
            for j in 0..i {
                a[j * dim + i] = a[i * dim + j];
            }
        }

        let mut solved: [Vec<f64>; 4] = Default::default();
        for (target, bt) in b.iter().enumerate() {
            solved[target] =
                solve_spd(&a, bt, dim).ok_or(RegressionError::NumericalFailure)?;
        }
        weights.insert(class.to_string(), solved);
    }

    Ok(RegressorModel { dim, lambda, convention, weights })
}

/// Predict offsets for a proposal from its crop feature and decode them.
/// The result is not clamped; callers clamp to their frame.
pub fn refine_box(
    model: &RegressorModel,
    class: &str,
    proposal: BoundingBox,
    feature: &FeatureVector,
) -> Result<BoundingBox, RegressionError> {
    if proposal.w <= 0.0 || proposal.h <= 0.0 {
        return Err(RegressionError::NonPositiveBox);
    }
    let per_class = model
        .weights
        .get(class)
        .ok_or_else(|| RegressionError::UnknownClass(class.to_string()))?;
    if feature.dim() != model.dim {
        return Err(RegressionError::DimMismatch { left: model.dim, right: feature.dim() });
    }
    let phi = feature.values();
    let mut offsets = [0.0f64; 4];
    for (target, w) in per_class.iter().enumerate() {
        offsets[target] = w.iter().zip(phi).map(|(wi, xi)| wi * xi).sum();
    }
    Ok(decode_box_with(model.convention, proposal, offsets))
}
