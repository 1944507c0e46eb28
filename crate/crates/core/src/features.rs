//! Feature vectors, appearance stages, the built-in grid descriptor, and the
//! provider abstraction that decouples the transfer pipeline from where
//! features come from (recomputed from pixels or loaded from files).

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::fmath;
use crate::geometry::{clamp_box, BoundingBox, ImageSize};

/// Edge length of the resampled patch the grid descriptor works on.
pub const GRID_RESAMPLE: usize = 64;
/// Pooling cells per axis.
pub const GRID_CELLS: usize = 4;
/// Orientation bins per cell.
pub const GRID_BINS: usize = 8;
/// Total descriptor dimension.
pub const GRID_DESCRIPTOR_DIM: usize = GRID_CELLS * GRID_CELLS * GRID_BINS;

/// Fixed-dimension real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn l2_norm(&self) -> f64 {
        fmath::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    pub fn dot(&self, other: &FeatureVector) -> Result<f64, FeatureError> {
        if self.dim() != other.dim() {
            return Err(FeatureError::DimMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Which appearance of an image a feature describes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// The whole image frame.
    FullImage,
    /// The current object crop.
    ObjectCrop,
    /// The crop of one named part.
    PartCrop(String),
}

impl Stage {
    pub fn part(name: &str) -> Stage {
        Stage::PartCrop(name.to_string())
    }
}

impl core::fmt::Display for Stage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Stage::FullImage => f.write_str("full"),
            Stage::ObjectCrop => f.write_str("object"),
            Stage::PartCrop(name) => write!(f, "part:{name}"),
        }
    }
}

impl core::str::FromStr for Stage {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Stage::FullImage),
            "object" => Ok(Stage::ObjectCrop),
            other => match other.strip_prefix("part:") {
                Some(name) if !name.is_empty() => Ok(Stage::part(name)),
                _ => Err(FeatureError::UnknownStage(other.to_string())),
            },
        }
    }
}

/// Row-major grayscale image with intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, FeatureError> {
        if width == 0 || height == 0 {
            return Err(FeatureError::EmptyRaster);
        }
        let expected = width * height;
        if pixels.len() != expected {
            return Err(FeatureError::PixelCount { got: pixels.len(), expected });
        }
        if pixels.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(FeatureError::InvalidPixels);
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width as f64, self.height as f64)
    }

    fn get(&self, x: usize, y: usize) -> f64 {
        f64::from(self.pixels[y * self.width + x])
    }

    /// Bilinear sample at a continuous image coordinate, treating pixel
    /// (c, r) as a point sample at (c + 0.5, r + 0.5) and replicating edges.
    fn sample(&self, sx: f64, sy: f64) -> f64 {
        let u = sx - 0.5;
        let v = sy - 0.5;
        let x0 = fmath::floor(u);
        let y0 = fmath::floor(v);
        let fx = u - x0;
        let fy = v - y0;
        let xi = x0 as isize;
        let yi = y0 as isize;
        let clamp_x = |x: isize| x.clamp(0, self.width as isize - 1) as usize;
        let clamp_y = |y: isize| y.clamp(0, self.height as isize - 1) as usize;
        let (xa, xb) = (clamp_x(xi), clamp_x(xi + 1));
        let (ya, yb) = (clamp_y(yi), clamp_y(yi + 1));
        let top = (1.0 - fx) * self.get(xa, ya) + fx * self.get(xb, ya);
        let bot = (1.0 - fx) * self.get(xa, yb) + fx * self.get(xb, yb);
        (1.0 - fy) * top + fy * bot
    }
}

/// Distance used for nearest-neighbor retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceMetric {
    /// 1 - cosine similarity; undefined for zero-norm vectors.
    #[default]
    Cosine,
    Euclidean,
}

impl DistanceMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Cosine => "cosine",
            DistanceMetric::Euclidean => "euclidean",
        }
    }
}

impl core::str::FromStr for DistanceMetric {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(DistanceMetric::Cosine),
            "euclidean" => Ok(DistanceMetric::Euclidean),
            other => Err(FeatureError::UnknownMetric(other.to_string())),
        }
    }
}

impl core::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("feature dimensions differ: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("cosine distance is undefined for a zero-norm vector")]
    UndefinedNorm,
    #[error("unknown image id `{0}`")]
    UnknownImage(String),
    #[error("image `{id}` has no `{stage}` feature")]
    StageUnavailable { id: String, stage: Stage },
    #[error("crop has no interior inside the image frame")]
    EmptyCrop,
    #[error("raster dimensions must be at least 1x1")]
    EmptyRaster,
    #[error("raster pixel buffer holds {got} values, expected {expected}")]
    PixelCount { got: usize, expected: usize },
    #[error("raster intensities must be finite and within [0, 1]")]
    InvalidPixels,
    #[error("unknown stage name `{0}`")]
    UnknownStage(String),
    #[error("unknown distance metric `{0}`")]
    UnknownMetric(String),
}

/// Distance between two vectors of equal dimension under `metric`.
pub fn distance(
    metric: DistanceMetric,
    a: &FeatureVector,
    b: &FeatureVector,
) -> Result<f64, FeatureError> {
    if a.dim() != b.dim() {
        return Err(FeatureError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    match metric {
        DistanceMetric::Cosine => {
            let na = a.l2_norm();
            let nb = b.l2_norm();
            if na == 0.0 || nb == 0.0 {
                return Err(FeatureError::UndefinedNorm);
            }
            let sim = (a.dot(b)? / (na * nb)).clamp(-1.0, 1.0);
            Ok(1.0 - sim)
        }
        DistanceMetric::Euclidean => {
            let sq: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| {
                    let d = x - y;
                    d * d
                })
                .sum();
            Ok(fmath::sqrt(sq))
        }
    }
}

/// Gradient-orientation descriptor of an image region.
///
/// The region is clamped to the frame, resampled to a 64x64 patch
/// (bilinear, half-pixel centers), and described by magnitude-weighted
/// 8-bin gradient-orientation histograms pooled over a 4x4 grid of cells,
/// L2-normalized. A gradient-free crop maps to the uniform unit vector, so
/// the result always has norm 1.
pub fn grid_descriptor(
    image: &RasterImage,
    region: BoundingBox,
) -> Result<FeatureVector, FeatureError> {
    let region = clamp_box(region, image.size()).map_err(|_| FeatureError::EmptyCrop)?;

    const N: usize = GRID_RESAMPLE;
    let mut patch = vec![0.0f64; N * N];
    let step_x = region.w / N as f64;
    let step_y = region.h / N as f64;
    for ty in 0..N {
        let sy = region.y + (ty as f64 + 0.5) * step_y;
        for tx in 0..N {
            let sx = region.x + (tx as f64 + 0.5) * step_x;
            patch[ty * N + tx] = image.sample(sx, sy);
        }
    }

    let mut hist = vec![0.0f64; GRID_DESCRIPTOR_DIM];
    let cell = N / GRID_CELLS;
    let bin_width = 2.0 * core::f64::consts::PI / GRID_BINS as f64;
    for y in 0..N {
        for x in 0..N {
            let xl = patch[y * N + x.saturating_sub(1)];
            let xr = patch[y * N + (x + 1).min(N - 1)];
            let yu = patch[y.saturating_sub(1) * N + x];
            let yd = patch[(y + 1).min(N - 1) * N + x];
            let gx = 0.5 * (xr - xl);
            let gy = 0.5 * (yd - yu);
            let mag = fmath::sqrt(gx * gx + gy * gy);
            if mag == 0.0 {
                continue;
            }
            let theta = fmath::atan2(gy, gx);
            let bin = (fmath::floor((theta + core::f64::consts::PI) / bin_width) as usize)
                .min(GRID_BINS - 1);
            let cx = x / cell;
            let cy = y / cell;
            hist[(cy * GRID_CELLS + cx) * GRID_BINS + bin] += mag;
        }
    }

    let norm = fmath::sqrt(hist.iter().map(|v| v * v).sum());
    if norm == 0.0 {
        let uniform = 1.0 / fmath::sqrt(GRID_DESCRIPTOR_DIM as f64);
        return Ok(FeatureVector::new(vec![uniform; GRID_DESCRIPTOR_DIM]));
    }
    for v in &mut hist {
        *v /= norm;
    }
    Ok(FeatureVector::new(hist))
}

/// Source of features for identified images.
///
/// Implementations must be deterministic: the same (id, region, stage)
/// always yields the same vector.
pub trait FeatureProvider {
    /// Dimension of every vector this provider serves.
    fn dim(&self) -> usize;

    /// Pixel frame of the identified image.
    fn image_size(&self, id: &str) -> Result<ImageSize, FeatureError>;

    /// Feature describing `region` of the identified image at `stage`.
    fn feature(
        &self,
        id: &str,
        region: BoundingBox,
        stage: &Stage,
    ) -> Result<FeatureVector, FeatureError>;

    /// Whether fresh features can be computed for arbitrary crops. Providers
    /// backed by fixed per-stage vectors return false; iterative callers use
    /// this to stop once every available stage has been spent.
    fn recomputes_crops(&self) -> bool;
}

/// Convenience alias for the trait-object form used by drivers.
pub fn provide_feature(
    provider: &dyn FeatureProvider,
    id: &str,
    region: BoundingBox,
    stage: &Stage,
) -> Result<FeatureVector, FeatureError> {
    provider.feature(id, region, stage)
}

#[derive(Debug, Clone, PartialEq)]
struct PrecomputedEntry {
    size: ImageSize,
    stages: BTreeMap<Stage, FeatureVector>,
}

/// Provider backed by fixed per-stage vectors, e.g. network features
/// computed offline. The region argument is ignored: each stage carries
/// exactly one vector per image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrecomputedProvider {
    dim: usize,
    entries: BTreeMap<String, PrecomputedEntry>,
}

impl PrecomputedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_image(&mut self, id: &str, size: ImageSize) {
        self.entries
            .entry(id.to_string())
            .or_insert(PrecomputedEntry { size, stages: BTreeMap::new() });
    }

    /// Attach a stage vector; all vectors across the provider must agree in
    /// dimension (the first insertion fixes it).
    pub fn insert_feature(
        &mut self,
        id: &str,
        stage: Stage,
        feature: FeatureVector,
    ) -> Result<(), FeatureError> {
        if self.dim == 0 {
            self.dim = feature.dim();
        } else if feature.dim() != self.dim {
            return Err(FeatureError::DimMismatch { left: self.dim, right: feature.dim() });
        }
        let entry = self
            .entries
            .get_mut(id)
            .ok_or_else(|| FeatureError::UnknownImage(id.to_string()))?;
        entry.stages.insert(stage, feature);
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn stages_of(&self, id: &str) -> Option<impl Iterator<Item = &Stage>> {
        self.entries.get(id).map(|e| e.stages.keys())
    }
}

impl FeatureProvider for PrecomputedProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn image_size(&self, id: &str) -> Result<ImageSize, FeatureError> {
        self.entries
            .get(id)
            .map(|e| e.size)
            .ok_or_else(|| FeatureError::UnknownImage(id.to_string()))
    }

    fn feature(
        &self,
        id: &str,
        _region: BoundingBox,
        stage: &Stage,
    ) -> Result<FeatureVector, FeatureError> {
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| FeatureError::UnknownImage(id.to_string()))?;
        entry.stages.get(stage).cloned().ok_or_else(|| FeatureError::StageUnavailable {
            id: id.to_string(),
            stage: stage.clone(),
        })
    }

    fn recomputes_crops(&self) -> bool {
        false
    }
}

/// Provider that computes the grid descriptor on demand from raster pixels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RasterProvider {
    images: BTreeMap<String, RasterImage>,
}

impl RasterProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_image(&mut self, id: &str, image: RasterImage) {
        self.images.insert(id.to_string(), image);
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.images.keys().map(String::as_str)
    }

    pub fn image(&self, id: &str) -> Option<&RasterImage> {
        self.images.get(id)
    }
}

impl FeatureProvider for RasterProvider {
    fn dim(&self) -> usize {
        GRID_DESCRIPTOR_DIM
    }

    fn image_size(&self, id: &str) -> Result<ImageSize, FeatureError> {
        self.images
            .get(id)
            .map(RasterImage::size)
            .ok_or_else(|| FeatureError::UnknownImage(id.to_string()))
    }

    fn feature(
        &self,
        id: &str,
        region: BoundingBox,
        _stage: &Stage,
    ) -> Result<FeatureVector, FeatureError> {
        let image =
            self.images.get(id).ok_or_else(|| FeatureError::UnknownImage(id.to_string()))?;
        grid_descriptor(image, region)
    }

    fn recomputes_crops(&self) -> bool {
        true
    }
}
