//! Seeded synthetic worlds with known ground truth, sized for desk-scale
//! verification of transfer, regression, and recognition behavior.
//!
//! Each sample belongs to one appearance cluster. The cluster fixes a slot
//! on a circle around the image center; `box_jitter` perturbs the object box
//! around that slot, so zero jitter makes same-cluster boxes identical.
//! Vector worlds emit per-stage feature vectors directly; raster worlds emit
//! grayscale images (bright object rectangle, brighter part rectangles,
//! noisy background) for descriptor-based runs.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::features::{
    FeatureError, FeatureProvider, FeatureVector, PrecomputedProvider, RasterImage,
    RasterProvider, Stage,
};
use crate::fmath;
use crate::geometry::{BoundingBox, ImageSize};
use crate::index::AnnotatedImage;

/// Cluster slots sit on a circle of this radius, relative to the shorter
/// image side.
const CIRCLE_RADIUS_FACTOR: f64 = 0.26;
/// Base object extent relative to the shorter image side.
const BASE_WIDTH_FACTOR: f64 = 0.32;
const BASE_HEIGHT_FACTOR: f64 = 0.26;
/// How strongly `box_jitter` moves centers (relative to the shorter side)
/// versus scales extents (log-normal sigma).
const POSITION_JITTER_FACTOR: f64 = 0.75;
const SIZE_JITTER_FACTOR: f64 = 1.0;
/// Scale of the cluster one-hot block in vector features.
const ONE_HOT_AMPLITUDE: f64 = 1.0;
/// Scale of the normalized box-parameter block in vector features.
const GEOMETRY_WEIGHT: f64 = 2.0;
/// Raster intensities: dark noisy background, cluster-coded object fill,
/// near-white part fill.
const BG_BASE: f32 = 0.05;
const OBJECT_BASE: f64 = 0.38;
const OBJECT_SPAN: f64 = 0.45;
const PART_FILL: f32 = 0.98;

/// Where a part sits inside the object box, in unit coordinates of that box,
/// with optional placement noise relative to the part's own extent.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub name: String,
    pub rel: BoundingBox,
    pub jitter: f64,
}

impl PartSpec {
    pub fn new(name: &str, rel: BoundingBox) -> Self {
        Self { name: name.to_string(), rel, jitter: 0.0 }
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Appearance groups; class labels coincide with clusters.
    pub n_clusters: usize,
    /// Emit grayscale rasters instead of precomputed vectors.
    pub raster: bool,
    pub image_size: ImageSize,
    /// Geometric noise around the cluster slot: offsets relative to the
    /// shorter image side, sizes as log-scale factors.
    pub box_jitter: f64,
    /// Vector mode: stddev of Gaussian noise added per feature component.
    /// Raster mode: amplitude of background clutter.
    pub feature_noise: f64,
    pub part_spec: Vec<PartSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 500,
            n_test: 200,
            n_clusters: 5,
            raster: false,
            image_size: ImageSize::new(128.0, 128.0),
            box_jitter: 0.05,
            feature_noise: 0.1,
            part_spec: vec![
                PartSpec::new("head", BoundingBox::new(0.55, 0.10, 0.35, 0.35)),
                PartSpec::new("body", BoundingBox::new(0.05, 0.45, 0.80, 0.45)),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0} must be positive")]
    BadCount(&'static str),
    #[error("image size must be positive and finite")]
    BadImageSize,
    #[error("{0} must be finite and non-negative")]
    BadNoise(&'static str),
    #[error("part `{0}` does not fit inside the unit object box")]
    PartOutsideObject(String),
    #[error("duplicate part `{0}`")]
    DuplicatePart(String),
    #[error("part name `{0}` is reserved")]
    ReservedPartName(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_train == 0 {
            return Err(SynthError::BadCount("n_train"));
        }
        if self.n_test == 0 {
            return Err(SynthError::BadCount("n_test"));
        }
        if self.n_clusters == 0 {
            return Err(SynthError::BadCount("n_clusters"));
        }
        if !self.image_size.is_valid() {
            return Err(SynthError::BadImageSize);
        }
        if !(self.box_jitter.is_finite() && self.box_jitter >= 0.0) {
            return Err(SynthError::BadNoise("box_jitter"));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(SynthError::BadNoise("feature_noise"));
        }
        for (i, part) in self.part_spec.iter().enumerate() {
            if part.name == crate::evaluation::OBJECT_REGION {
                return Err(SynthError::ReservedPartName(part.name.clone()));
            }
            if self.part_spec[..i].iter().any(|p| p.name == part.name) {
                return Err(SynthError::DuplicatePart(part.name.clone()));
            }
            let r = part.rel;
            let fits = r.w > 0.0
                && r.h > 0.0
                && r.x >= 0.0
                && r.y >= 0.0
                && r.right() <= 1.0
                && r.bottom() <= 1.0
                && r.is_finite();
            if !fits {
                return Err(SynthError::PartOutsideObject(part.name.clone()));
            }
            if !(part.jitter.is_finite() && part.jitter >= 0.0) {
                return Err(SynthError::BadNoise("part jitter"));
            }
        }
        Ok(())
    }

    pub fn class_label(&self, cluster: usize) -> String {
        format!("class-{cluster:02}")
    }
}

/// Per-image features or pixels backing a generated world.
#[derive(Debug, Clone, PartialEq)]
pub enum WorldAssets {
    Vector(PrecomputedProvider),
    Raster(RasterProvider),
}

/// A generated dataset: annotated records are the ground truth, assets feed
/// the matching provider kind.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub train: Vec<AnnotatedImage>,
    pub test: Vec<AnnotatedImage>,
    pub assets: WorldAssets,
}

impl SyntheticWorld {
    pub fn provider(&self) -> &dyn FeatureProvider {
        match &self.assets {
            WorldAssets::Vector(p) => p,
            WorldAssets::Raster(p) => p,
        }
    }

    pub fn raster(&self, id: &str) -> Option<&RasterImage> {
        match &self.assets {
            WorldAssets::Vector(_) => None,
            WorldAssets::Raster(p) => p.image(id),
        }
    }
}

struct Sample {
    cluster: usize,
    object: BoundingBox,
    parts: Vec<(String, BoundingBox)>,
}

fn split_stream(seed: u64, label: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn clamp_into(value: f64, lo: f64, hi: f64) -> f64 {
    value.max(lo).min(hi)
}

fn draw_sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Sample {
    let w_img = cfg.image_size.width;
    let h_img = cfg.image_size.height;
    let smin = w_img.min(h_img);
    let cluster = rng.random_range(0..cfg.n_clusters);
    let angle = core::f64::consts::TAU * cluster as f64 / cfg.n_clusters as f64;

    let zx: f64 = rng.sample(StandardNormal);
    let zy: f64 = rng.sample(StandardNormal);
    let zw: f64 = rng.sample(StandardNormal);
    let zh: f64 = rng.sample(StandardNormal);
    let size_sigma = SIZE_JITTER_FACTOR * cfg.box_jitter;
    let pos_sigma = POSITION_JITTER_FACTOR * cfg.box_jitter * smin;
    let w = (BASE_WIDTH_FACTOR * smin * fmath::exp(size_sigma * zw)).min(w_img);
    let h = (BASE_HEIGHT_FACTOR * smin * fmath::exp(size_sigma * zh)).min(h_img);
    let cx = w_img / 2.0 + CIRCLE_RADIUS_FACTOR * smin * fmath::cos(angle) + pos_sigma * zx;
    let cy = h_img / 2.0 + CIRCLE_RADIUS_FACTOR * smin * fmath::sin(angle) + pos_sigma * zy;
    let x = clamp_into(cx - w / 2.0, 0.0, w_img - w);
    let y = clamp_into(cy - h / 2.0, 0.0, h_img - h);
    let object = BoundingBox::new(x, y, w, h);

    let mut parts = Vec::with_capacity(cfg.part_spec.len());
    for spec in &cfg.part_spec {
        let pw = spec.rel.w * w;
        let ph = spec.rel.h * h;
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        let px = clamp_into(x + spec.rel.x * w + spec.jitter * pw * dx, x, x + w - pw);
        let py = clamp_into(y + spec.rel.y * h + spec.jitter * ph * dy, y, y + h - ph);
        parts.push((spec.name.clone(), BoundingBox::new(px, py, pw, ph)));
    }
    Sample { cluster, object, parts }
}

fn normalized_params(b: BoundingBox, size: ImageSize) -> [f64; 4] {
    [b.x / size.width, b.y / size.height, b.w / size.width, b.h / size.height]
}

fn vector_feature(
    cfg: &SynthConfig,
    cluster: usize,
    one_hot_scale: f64,
    region: BoundingBox,
    rng: &mut ChaCha8Rng,
) -> FeatureVector {
    let mut values = vec![0.0f64; cfg.n_clusters + 4];
    values[cluster] = ONE_HOT_AMPLITUDE * one_hot_scale;
    let geo = normalized_params(region, cfg.image_size);
    for (slot, g) in values[cfg.n_clusters..].iter_mut().zip(geo) {
        *slot = GEOMETRY_WEIGHT * g;
    }
    if cfg.feature_noise > 0.0 {
        for v in values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += cfg.feature_noise * z;
        }
    }
    FeatureVector::new(values)
}

fn quantize(v: f64) -> f32 {
    (fmath::round(clamp_into(v, 0.0, 1.0) * 255.0) / 255.0) as f32
}

fn fill_rect(pixels: &mut [f32], width: usize, height: usize, b: BoundingBox, value: f32) {
    let x0 = clamp_into(fmath::floor(b.x), 0.0, width as f64) as usize;
    let y0 = clamp_into(fmath::floor(b.y), 0.0, height as f64) as usize;
    let x1 = clamp_into(fmath::floor(b.right() - 1e-9) + 1.0, 0.0, width as f64) as usize;
    let y1 = clamp_into(fmath::floor(b.bottom() - 1e-9) + 1.0, 0.0, height as f64) as usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let cx = x as f64 + 0.5;
            let cy = y as f64 + 0.5;
            if cx >= b.x && cx < b.right() && cy >= b.y && cy < b.bottom() {
                pixels[y * width + x] = value;
            }
        }
    }
}

fn raster_image(cfg: &SynthConfig, sample: &Sample, rng: &mut ChaCha8Rng) -> RasterImage {
    let width = cfg.image_size.width as usize;
    let height = cfg.image_size.height as usize;
    let mut pixels = vec![0.0f32; width * height];
    for p in pixels.iter_mut() {
        let u: f64 = rng.random_range(0.0..1.0);
        *p = quantize(BG_BASE as f64 + 2.0 * cfg.feature_noise * u);
    }
    let span = if cfg.n_clusters > 1 {
        OBJECT_SPAN * sample.cluster as f64 / (cfg.n_clusters - 1) as f64
    } else {
        OBJECT_SPAN / 2.0
    };
    fill_rect(&mut pixels, width, height, sample.object, quantize(OBJECT_BASE + span));
    for (_, part) in &sample.parts {
        fill_rect(&mut pixels, width, height, *part, quantize(PART_FILL as f64));
    }
    RasterImage::new(width, height, pixels).expect("generated pixels are valid")
}

fn record_for(cfg: &SynthConfig, id: &str, sample: &Sample) -> AnnotatedImage {
    let mut rec = AnnotatedImage::new(id, cfg.image_size)
        .with_class(&cfg.class_label(sample.cluster))
        .with_object_box(sample.object);
    for (name, b) in &sample.parts {
        rec = rec.with_part(name, Some(*b));
    }
    rec
}

/// Generate a world. Identical configs give identical worlds; the train and
/// test splits use independent random streams.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticWorld, SynthError> {
    cfg.validate()?;
    let mut train = Vec::with_capacity(cfg.n_train);
    let mut test = Vec::with_capacity(cfg.n_test);
    let mut vectors = PrecomputedProvider::new();
    let mut rasters = RasterProvider::new();

    let splits: [(&str, usize, u64, &mut Vec<AnnotatedImage>); 2] = [
        ("train", cfg.n_train, 1, &mut train),
        ("test", cfg.n_test, 2, &mut test),
    ];
    for (prefix, count, stream, records) in splits {
        let mut rng = split_stream(cfg.seed, stream);
        for i in 0..count {
            let id = format!("{prefix}-{i:04}");
            let sample = draw_sample(cfg, &mut rng);
            records.push(record_for(cfg, &id, &sample));
            if cfg.raster {
                rasters.insert_image(&id, raster_image(cfg, &sample, &mut rng));
            } else {
                vectors.insert_image(&id, cfg.image_size);
                let area_ratio = (sample.object.area())
                    / (cfg.image_size.width * cfg.image_size.height);
                let full =
                    vector_feature(cfg, sample.cluster, area_ratio, sample.object, &mut rng);
                vectors.insert_feature(&id, Stage::FullImage, full)?;
                let object = vector_feature(cfg, sample.cluster, 1.0, sample.object, &mut rng);
                vectors.insert_feature(&id, Stage::ObjectCrop, object)?;
                for (name, b) in &sample.parts {
                    let part = vector_feature(cfg, sample.cluster, 1.0, *b, &mut rng);
                    vectors.insert_feature(&id, Stage::PartCrop(name.clone()), part)?;
                }
            }
        }
    }

    let assets = if cfg.raster {
        WorldAssets::Raster(rasters)
    } else {
        WorldAssets::Vector(vectors)
    };
    Ok(SyntheticWorld { train, test, assets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::DistanceMetric;
    use crate::geometry::iou;
    use crate::index::{build_index, knn};
    use crate::transfer::{transfer_step, BoxField, TransferConfig};

    fn small(raster: bool) -> SynthConfig {
        SynthConfig {
            n_train: 40,
            n_test: 10,
            raster,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn identical_configs_generate_identical_worlds() {
        let cfg = small(false);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let raster_cfg = small(true);
        assert_eq!(generate(&raster_cfg).unwrap(), generate(&raster_cfg).unwrap());
    }

    #[test]
    fn annotations_respect_frame_and_containment() {
        let world = generate(&small(false)).unwrap();
        for rec in world.train.iter().chain(&world.test) {
            let frame = rec.size.frame_box();
            let object = rec.object_box.unwrap();
            assert!(frame.contains(&object), "object outside frame in {}", rec.id);
            for (name, part) in &rec.part_boxes {
                let part = part.unwrap();
                assert!(object.contains(&part), "part {name} escapes object in {}", rec.id);
            }
            assert!(rec.class_label.is_some());
        }
        let provider = world.provider();
        build_index(
            world.train.clone(),
            provider,
            &[Stage::FullImage],
            DistanceMetric::Cosine,
        )
        .unwrap();
    }

    #[test]
    fn zero_jitter_makes_same_cluster_boxes_identical() {
        let cfg = SynthConfig { box_jitter: 0.0, feature_noise: 0.0, ..small(false) };
        let world = generate(&cfg).unwrap();
        for a in &world.train {
            for b in &world.train {
                if a.class_label == b.class_label {
                    assert_eq!(a.object_box, b.object_box);
                    assert_eq!(a.part_boxes, b.part_boxes);
                }
            }
        }
    }

    #[test]
    fn noiseless_single_neighbor_transfer_is_exact() {
        let cfg = SynthConfig { box_jitter: 0.0, feature_noise: 0.0, ..small(false) };
        let world = generate(&cfg).unwrap();
        let provider = world.provider();
        let index = build_index(
            world.train.clone(),
            provider,
            &[Stage::FullImage],
            DistanceMetric::Cosine,
        )
        .unwrap();
        let step = TransferConfig { m: 1, ..TransferConfig::default() };
        for rec in &world.test {
            let frame = rec.size;
            let query = provider.feature(&rec.id, frame.frame_box(), &Stage::FullImage).unwrap();
            let got = transfer_step(
                &query,
                frame,
                &index,
                &Stage::FullImage,
                BoxField::Object,
                &step,
                None,
            )
            .unwrap();
            let truth = rec.object_box.unwrap();
            assert_eq!(got, truth, "inexact transfer for {}", rec.id);
            assert_eq!(iou(got, truth), 1.0);
        }
    }

    #[test]
    fn noiseless_nearest_neighbor_shares_the_cluster() {
        let cfg = SynthConfig { feature_noise: 0.0, ..small(false) };
        let world = generate(&cfg).unwrap();
        let provider = world.provider();
        let index = build_index(
            world.train.clone(),
            provider,
            &[Stage::FullImage, Stage::ObjectCrop],
            DistanceMetric::Cosine,
        )
        .unwrap();
        for rec in &world.test {
            let query = provider
                .feature(&rec.id, rec.object_box.unwrap(), &Stage::ObjectCrop)
                .unwrap();
            let hit = knn(&index, &query, &Stage::ObjectCrop, 1, None).unwrap();
            let neighbor = &index.records()[hit[0].record];
            assert_eq!(neighbor.class_label, rec.class_label);
        }
    }

    #[test]
    fn raster_worlds_paint_quantized_rectangles() {
        let world = generate(&small(true)).unwrap();
        for rec in world.train.iter().chain(&world.test) {
            let image = world.raster(&rec.id).unwrap();
            assert_eq!(image.size(), rec.size);
            for p in image.pixels() {
                let scaled = f64::from(*p) * 255.0;
                assert!((scaled - fmath::round(scaled)).abs() < 1e-4);
            }
            let object = rec.object_box.unwrap();
            let ox = (object.x + object.w / 2.0) as usize;
            let oy = (object.y + object.h * 0.95) as usize;
            let object_pixel = image.pixels()[oy * image.width() + ox];
            assert!(object_pixel > 0.3, "object fill too dark in {}", rec.id);
            let head = rec.part_boxes["head"].unwrap();
            let hx = (head.x + head.w / 2.0) as usize;
            let hy = (head.y + head.h / 2.0) as usize;
            let head_pixel = image.pixels()[hy * image.width() + hx];
            assert!((f64::from(head_pixel) - 0.98).abs() < 0.01);
        }
    }

    #[test]
    fn vector_mode_has_no_rasters_and_vice_versa() {
        let vector_world = generate(&small(false)).unwrap();
        assert!(vector_world.raster("train-0000").is_none());
        let raster_world = generate(&small(true)).unwrap();
        assert!(raster_world.raster("train-0000").is_some());
        assert_eq!(raster_world.provider().dim(), crate::features::GRID_DESCRIPTOR_DIM);
    }

    #[test]
    fn config_validation_rejects_bad_worlds() {
        let ok = small(false);
        assert!(ok.validate().is_ok());
        assert!(SynthConfig { n_train: 0, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { n_test: 0, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { n_clusters: 0, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { box_jitter: f64::NAN, ..ok.clone() }.validate().is_err());
        assert!(SynthConfig { feature_noise: -1.0, ..ok.clone() }.validate().is_err());
        assert!(
            SynthConfig { image_size: ImageSize::new(0.0, 5.0), ..ok.clone() }
                .validate()
                .is_err()
        );

        let escaping = SynthConfig {
            part_spec: vec![PartSpec::new("tail", BoundingBox::new(0.8, 0.8, 0.5, 0.5))],
            ..ok.clone()
        };
        assert_eq!(
            escaping.validate().unwrap_err(),
            SynthError::PartOutsideObject("tail".to_string())
        );
        let duplicate = SynthConfig {
            part_spec: vec![
                PartSpec::new("head", BoundingBox::new(0.1, 0.1, 0.2, 0.2)),
                PartSpec::new("head", BoundingBox::new(0.5, 0.5, 0.2, 0.2)),
            ],
            ..ok.clone()
        };
        assert_eq!(
            duplicate.validate().unwrap_err(),
            SynthError::DuplicatePart("head".to_string())
        );
        let reserved = SynthConfig {
            part_spec: vec![PartSpec::new("object", BoundingBox::new(0.1, 0.1, 0.2, 0.2))],
            ..ok
        };
        assert_eq!(
            reserved.validate().unwrap_err(),
            SynthError::ReservedPartName("object".to_string())
        );
    }

    #[test]
    fn default_world_covers_every_cluster() {
        let world = generate(&SynthConfig { n_train: 60, n_test: 5, ..SynthConfig::default() })
            .unwrap();
        let classes: alloc::collections::BTreeSet<_> =
            world.train.iter().filter_map(|r| r.class_label.clone()).collect();
        assert_eq!(classes.len(), SynthConfig::default().n_clusters);
    }
}
