//! One-vs-all linear SVM over concatenated region features.
//!
//! Training minimizes, per class, `(1/(2C))*|w|^2 + sum_i hinge_i` by
//! epoch-based stochastic subgradient descent with the `1/(lambda*t)` step
//! schedule and seeded shuffling. Epoch-end states that raise the objective
//! are rolled back, so the recorded per-epoch objective never increases and
//! identical seeds give bit-identical models.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::FeatureVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecognitionError {
    #[error("no training examples")]
    EmptyTraining,
    #[error("training needs at least two classes, got `{0}`")]
    SingleClass(String),
    #[error("regularization constant must be positive and finite, got {0}")]
    BadC(f64),
    #[error("epoch count must be positive")]
    BadEpochs,
    #[error("feature dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("region `{0}` is not in the layout")]
    UnknownRegion(String),
    #[error("region `{region}` expects dim {expected}, got {got}")]
    RegionDimMismatch { region: String, expected: usize, got: usize },
    #[error("duplicate region `{0}` in layout")]
    DuplicateRegion(String),
    #[error("layout has no regions")]
    EmptyLayout,
    #[error("region dims must be positive")]
    ZeroRegionDim,
    #[error("layout total dim {layout} differs from model dim {model}")]
    LayoutDimMismatch { layout: usize, model: usize },
    #[error("model weights malformed: {0}")]
    MalformedModel(&'static str),
}

/// Ordered region names with their feature dimensions. Concatenation and
/// classifier weights follow this order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLayout {
    regions: Vec<(String, usize)>,
}

impl RegionLayout {
    pub fn new(regions: Vec<(String, usize)>) -> Result<Self, RecognitionError> {
        if regions.is_empty() {
            return Err(RecognitionError::EmptyLayout);
        }
        for (i, (name, dim)) in regions.iter().enumerate() {
            if *dim == 0 {
                return Err(RecognitionError::ZeroRegionDim);
            }
            if regions[..i].iter().any(|(seen, _)| seen == name) {
                return Err(RecognitionError::DuplicateRegion(name.clone()));
            }
        }
        Ok(Self { regions })
    }

    pub fn of(regions: &[(&str, usize)]) -> Result<Self, RecognitionError> {
        Self::new(regions.iter().map(|(n, d)| (n.to_string(), *d)).collect())
    }

    /// Single unnamed region spanning the whole vector.
    pub fn flat(dim: usize) -> Result<Self, RecognitionError> {
        Self::new(vec![("feature".to_string(), dim)])
    }

    pub fn regions(&self) -> &[(String, usize)] {
        &self.regions
    }

    pub fn total_dim(&self) -> usize {
        self.regions.iter().map(|(_, d)| d).sum()
    }
}

/// Concatenate per-region features in layout order. Absent regions become
/// zero vectors so the output dimension is always the layout total.
pub fn concat_regions(
    features: &BTreeMap<String, Option<FeatureVector>>,
    layout: &RegionLayout,
) -> Result<FeatureVector, RecognitionError> {
    for name in features.keys() {
        if !layout.regions.iter().any(|(n, _)| n == name) {
            return Err(RecognitionError::UnknownRegion(name.clone()));
        }
    }
    let mut values = Vec::with_capacity(layout.total_dim());
    for (name, dim) in &layout.regions {
        match features.get(name) {
            Some(Some(f)) => {
                if f.dim() != *dim {
                    return Err(RecognitionError::RegionDimMismatch {
                        region: name.clone(),
                        expected: *dim,
                        got: f.dim(),
                    });
                }
                values.extend_from_slice(f.values());
            }
            _ => values.extend(core::iter::repeat(0.0).take(*dim)),
        }
    }
    Ok(FeatureVector::new(values))
}

/// Linear one-vs-all classifier. Class ids are kept sorted; prediction ties
/// resolve to the earliest id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    classes: Vec<String>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    layout: RegionLayout,
    c: f64,
    epoch_objectives: Vec<Vec<f64>>,
}

impl ClassifierModel {
    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn layout(&self) -> &RegionLayout {
        &self.layout
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn weights_of(&self, class: &str) -> Option<(&[f64], f64)> {
        let i = self.classes.iter().position(|c| c == class)?;
        Some((&self.weights[i], self.biases[i]))
    }

    /// Objective value after each accepted epoch, per class in class order.
    /// Non-increasing within each class by construction.
    pub fn epoch_objectives(&self) -> &[Vec<f64>] {
        &self.epoch_objectives
    }

    /// Replace the bookkeeping layout. The total dimension must match the
    /// trained weights; training itself never inspects region boundaries.
    pub fn with_layout(mut self, layout: RegionLayout) -> Result<Self, RecognitionError> {
        if layout.total_dim() != self.dim() {
            return Err(RecognitionError::LayoutDimMismatch {
                layout: layout.total_dim(),
                model: self.dim(),
            });
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn from_parts(
        layout: RegionLayout,
        c: f64,
        classes: Vec<String>,
        weights: Vec<Vec<f64>>,
        biases: Vec<f64>,
    ) -> Result<Self, RecognitionError> {
        if classes.len() < 2 {
            return Err(RecognitionError::MalformedModel("fewer than two classes"));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(RecognitionError::MalformedModel("class ids must be sorted and unique"));
        }
        if weights.len() != classes.len() || biases.len() != classes.len() {
            return Err(RecognitionError::MalformedModel("per-class arrays differ in length"));
        }
        let dim = layout.total_dim();
        if weights.iter().any(|w| w.len() != dim) {
            return Err(RecognitionError::MalformedModel("weight length differs from layout dim"));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(RecognitionError::BadC(c));
        }
        Ok(Self { classes, weights, biases, layout, c, epoch_objectives: Vec::new() })
    }
}

fn hinge_objective(w: &[f64], b: f64, xs: &[&FeatureVector], ys: &[f64], c: f64) -> f64 {
    let norm_sq: f64 = w.iter().map(|v| v * v).sum();
    let mut obj = norm_sq / (2.0 * c);
    for (x, y) in xs.iter().zip(ys) {
        let margin = y * (w.iter().zip(x.values()).map(|(wi, xi)| wi * xi).sum::<f64>() + b);
        if margin < 1.0 {
            obj += 1.0 - margin;
        }
    }
    obj
}

/// Train one binary hinge classifier per class (that class vs all others).
pub fn train_svm(
    examples: &[(FeatureVector, String)],
    c: f64,
    epochs: usize,
    seed: u64,
) -> Result<ClassifierModel, RecognitionError> {
    if examples.is_empty() {
        return Err(RecognitionError::EmptyTraining);
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(RecognitionError::BadC(c));
    }
    if epochs == 0 {
        return Err(RecognitionError::BadEpochs);
    }
    let dim = examples[0].0.dim();
    for (x, _) in examples {
        if x.dim() != dim {
            return Err(RecognitionError::DimMismatch { left: dim, right: x.dim() });
        }
    }
    let mut classes: Vec<String> = examples.iter().map(|(_, c)| c.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(RecognitionError::SingleClass(classes[0].clone()));
    }

    let n = examples.len();
    let xs: Vec<&FeatureVector> = examples.iter().map(|(x, _)| x).collect();
    let lambda = 1.0 / (c * n as f64);

    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    let mut epoch_objectives = Vec::with_capacity(classes.len());
    for (class_idx, class) in classes.iter().enumerate() {
        let ys: Vec<f64> =
            examples.iter().map(|(_, l)| if l == class { 1.0 } else { -1.0 }).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (class_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut order: Vec<usize> = (0..n).collect();

        let mut w = vec![0.0f64; dim];
        let mut b = 0.0f64;
        let mut best_obj = hinge_objective(&w, b, &xs, &ys, c);
        let mut best = (w.clone(), b);
        let mut objectives = Vec::with_capacity(epochs);
        let mut t = 0u64;
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let margin =
                    ys[i] * (w.iter().zip(xs[i].values()).map(|(wi, xi)| wi * xi).sum::<f64>() + b);
                let shrink = 1.0 - eta * lambda;
                for wj in w.iter_mut() {
                    *wj *= shrink;
                }
                if margin < 1.0 {
                    for (wj, xj) in w.iter_mut().zip(xs[i].values()) {
                        *wj += eta * ys[i] * xj;
                    }
                    b += eta * ys[i];
                }
            }
            let obj = hinge_objective(&w, b, &xs, &ys, c);
            if obj <= best_obj {
                best_obj = obj;
                best = (w.clone(), b);
            } else {
                w = best.0.clone();
                b = best.1;
            }
            objectives.push(best_obj);
        }
        weights.push(best.0);
        biases.push(best.1);
        epoch_objectives.push(objectives);
    }

    Ok(ClassifierModel {
        classes,
        weights,
        biases,
        layout: RegionLayout::flat(dim)?,
        c,
        epoch_objectives,
    })
}

/// Per-class decision values `w_c . x + b_c`, in class order.
pub fn decision_values(
    model: &ClassifierModel,
    feature: &FeatureVector,
) -> Result<Vec<f64>, RecognitionError> {
    if feature.dim() != model.dim() {
        return Err(RecognitionError::DimMismatch { left: model.dim(), right: feature.dim() });
    }
    Ok(model
        .weights
        .iter()
        .zip(&model.biases)
        .map(|(w, b)| w.iter().zip(feature.values()).map(|(wi, xi)| wi * xi).sum::<f64>() + b)
        .collect())
}

/// Highest-scoring class with all per-class scores. Ties go to the earliest
/// class id.
pub fn predict(
    model: &ClassifierModel,
    feature: &FeatureVector,
) -> Result<(String, Vec<f64>), RecognitionError> {
    let scores = decision_values(model, feature)?;
    let mut arg = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[arg] {
            arg = i;
        }
    }
    Ok((model.classes[arg].clone(), scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fv(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec())
    }

    fn gaussian_clusters(n_per: usize, seed: u64) -> Vec<(FeatureVector, String)> {
        use rand_distr::StandardNormal;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for (center, label) in [(-5.0, "neg"), (5.0, "pos")] {
            for _ in 0..n_per {
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                out.push((fv(&[center + 0.5 * z0, 0.5 * z1]), label.to_string()));
            }
        }
        out
    }

    #[test]
    fn layout_validation() {
        assert_eq!(RegionLayout::new(Vec::new()).unwrap_err(), RecognitionError::EmptyLayout);
        assert_eq!(
            RegionLayout::of(&[("a", 2), ("a", 3)]).unwrap_err(),
            RecognitionError::DuplicateRegion("a".to_string())
        );
        assert_eq!(
            RegionLayout::of(&[("a", 0)]).unwrap_err(),
            RecognitionError::ZeroRegionDim
        );
        let layout = RegionLayout::of(&[("a", 2), ("b", 3)]).unwrap();
        assert_eq!(layout.total_dim(), 5);
    }

    #[test]
    fn concat_in_layout_order() {
        let layout = RegionLayout::of(&[("a", 2), ("b", 2)]).unwrap();
        let features = BTreeMap::from([
            ("b".to_string(), Some(fv(&[3.0, 4.0]))),
            ("a".to_string(), Some(fv(&[1.0, 2.0]))),
        ]);
        let got = concat_regions(&features, &layout).unwrap();
        assert_eq!(got.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn concat_zero_fills_absent_regions() {
        let layout = RegionLayout::of(&[("a", 2), ("b", 2)]).unwrap();
        let explicit_none = BTreeMap::from([
            ("a".to_string(), Some(fv(&[1.0, 2.0]))),
            ("b".to_string(), None),
        ]);
        let missing_key = BTreeMap::from([("a".to_string(), Some(fv(&[1.0, 2.0])))]);
        for features in [explicit_none, missing_key] {
            let got = concat_regions(&features, &layout).unwrap();
            assert_eq!(got.values(), &[1.0, 2.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn concat_rejects_bad_regions() {
        let layout = RegionLayout::of(&[("a", 2), ("b", 2)]).unwrap();
        let wrong_dim = BTreeMap::from([("b".to_string(), Some(fv(&[1.0])))]);
        assert_eq!(
            concat_regions(&wrong_dim, &layout).unwrap_err(),
            RecognitionError::RegionDimMismatch { region: "b".to_string(), expected: 2, got: 1 }
        );
        let unknown = BTreeMap::from([("c".to_string(), None)]);
        assert_eq!(
            concat_regions(&unknown, &layout).unwrap_err(),
            RecognitionError::UnknownRegion("c".to_string())
        );
    }

    #[test]
    fn separable_clusters_reach_full_training_accuracy() {
        let examples = gaussian_clusters(20, 11);
        let model = train_svm(&examples, 1.0, 50, 7).unwrap();
        for (x, label) in &examples {
            let (got, _) = predict(&model, x).unwrap();
            assert_eq!(&got, label);
        }
    }

    #[test]
    fn duplicated_example_keeps_training_labels() {
        let mut examples = gaussian_clusters(20, 11);
        let base = train_svm(&examples, 1.0, 50, 7).unwrap();
        examples.push(examples[0].clone());
        let dup = train_svm(&examples, 1.0, 50, 7).unwrap();
        for (x, _) in &examples {
            assert_eq!(predict(&base, x).unwrap().0, predict(&dup, x).unwrap().0);
        }
    }

    #[test]
    fn one_example_per_class_separates() {
        let examples = vec![
            (fv(&[1.0, 0.0]), "a".to_string()),
            (fv(&[-1.0, 0.0]), "b".to_string()),
        ];
        let model = train_svm(&examples, 1.0, 50, 0).unwrap();
        assert_eq!(predict(&model, &fv(&[1.0, 0.0])).unwrap().0, "a");
        assert_eq!(predict(&model, &fv(&[-1.0, 0.0])).unwrap().0, "b");
    }

    #[test]
    fn objective_never_increases_per_epoch() {
        let examples = gaussian_clusters(20, 3);
        let model = train_svm(&examples, 1.0, 50, 9).unwrap();
        for per_class in model.epoch_objectives() {
            assert_eq!(per_class.len(), 50);
            for pair in per_class.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-6, "objective rose: {} -> {}", pair[0], pair[1]);
            }
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let examples = gaussian_clusters(10, 21);
        let a = train_svm(&examples, 1.0, 30, 42).unwrap();
        let b = train_svm(&examples, 1.0, 30, 42).unwrap();
        assert_eq!(a, b);
        let c = train_svm(&examples, 1.0, 30, 43).unwrap();
        assert_ne!(a.weights_of("pos"), c.weights_of("pos"));
    }

    #[test]
    fn zero_model_predicts_first_class() {
        let layout = RegionLayout::flat(2).unwrap();
        let model = ClassifierModel::from_parts(
            layout,
            1.0,
            vec!["a".to_string(), "b".to_string()],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![0.0, 0.0],
        )
        .unwrap();
        let (class, scores) = predict(&model, &fv(&[3.0, -4.0])).unwrap();
        assert_eq!(class, "a");
        assert_eq!(scores, vec![0.0, 0.0]);
    }

    #[test]
    fn scaling_preserves_argmax_without_biases() {
        let layout = RegionLayout::flat(2).unwrap();
        let model = ClassifierModel::from_parts(
            layout,
            1.0,
            vec!["a".to_string(), "b".to_string()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
        )
        .unwrap();
        let x = fv(&[0.3, 0.7]);
        let x2 = fv(&[0.6, 1.4]);
        assert_eq!(predict(&model, &x).unwrap().0, predict(&model, &x2).unwrap().0);
    }

    #[test]
    fn train_validates_inputs() {
        assert_eq!(train_svm(&[], 1.0, 5, 0).unwrap_err(), RecognitionError::EmptyTraining);
        let one = vec![(fv(&[1.0]), "a".to_string()), (fv(&[2.0]), "a".to_string())];
        assert_eq!(
            train_svm(&one, 1.0, 5, 0).unwrap_err(),
            RecognitionError::SingleClass("a".to_string())
        );
        let two = vec![(fv(&[1.0]), "a".to_string()), (fv(&[2.0]), "b".to_string())];
        assert_eq!(train_svm(&two, 0.0, 5, 0).unwrap_err(), RecognitionError::BadC(0.0));
        assert_eq!(train_svm(&two, 1.0, 0, 0).unwrap_err(), RecognitionError::BadEpochs);
        let ragged = vec![(fv(&[1.0]), "a".to_string()), (fv(&[2.0, 3.0]), "b".to_string())];
        assert!(matches!(
            train_svm(&ragged, 1.0, 5, 0),
            Err(RecognitionError::DimMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn predict_checks_dim() {
        let examples = gaussian_clusters(5, 2);
        let model = train_svm(&examples, 1.0, 10, 0).unwrap();
        assert!(matches!(
            predict(&model, &fv(&[1.0])),
            Err(RecognitionError::DimMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn with_layout_revalidates_dim() {
        let examples = gaussian_clusters(5, 2);
        let model = train_svm(&examples, 1.0, 10, 0).unwrap();
        let bad = RegionLayout::of(&[("a", 3)]).unwrap();
        assert!(matches!(
            model.clone().with_layout(bad),
            Err(RecognitionError::LayoutDimMismatch { layout: 3, model: 2 })
        ));
        let good = RegionLayout::of(&[("a", 1), ("b", 1)]).unwrap();
        let relabeled = model.with_layout(good).unwrap();
        assert_eq!(relabeled.layout().regions().len(), 2);
    }
}
