//! Run configuration: defaults, TOML config files, and flag overrides.
//!
//! Precedence is flags over config file over defaults. After merging, the
//! effective configuration is written next to the outputs so a run can be
//! reproduced from its artifacts alone.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use boxtransfer_core::features::DistanceMetric;
use boxtransfer_core::geometry::FusionMode;
use boxtransfer_core::regression::TargetConvention;
use boxtransfer_core::transfer::TransferConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: PathsSection,
    pub transfer: TransferSection,
    pub regression: RegressionSection,
    pub svm: SvmSection,
    pub evaluation: EvaluationSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raster_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regressor: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub localizations: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferSection {
    pub m: usize,
    pub fusion: String,
    pub max_iters: usize,
    pub stability_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score_threshold: Option<f64>,
    pub metric: String,
}

impl Default for TransferSection {
    fn default() -> Self {
        let core = TransferConfig::default();
        Self {
            m: core.m,
            fusion: core.fusion.name().to_string(),
            max_iters: core.max_iters,
            stability_iou: core.stability_iou,
            score_threshold: None,
            metric: core.metric.name().to_string(),
        }
    }
}

impl TransferSection {
    pub fn to_core(&self) -> Result<TransferConfig> {
        Ok(TransferConfig {
            m: self.m,
            fusion: FusionMode::from_str(&self.fusion)
                .with_context(|| format!("fusion mode `{}`", self.fusion))?,
            max_iters: self.max_iters,
            stability_iou: self.stability_iou,
            score_threshold: self.score_threshold,
            metric: self.metric()?,
        })
    }

    pub fn metric(&self) -> Result<DistanceMetric> {
        DistanceMetric::from_str(&self.metric)
            .with_context(|| format!("distance metric `{}`", self.metric))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub lambda: f64,
    pub convention: String,
    pub apply_to_parts: bool,
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            convention: TargetConvention::default().name().to_string(),
            apply_to_parts: false,
        }
    }
}

impl RegressionSection {
    pub fn convention(&self) -> Result<TargetConvention> {
        TargetConvention::from_str(&self.convention)
            .with_context(|| format!("target convention `{}`", self.convention))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Comma-separated region list fed to the classifier, e.g. "full,object".
    pub regions: String,
    pub top_k: usize,
}

impl Default for SvmSection {
    fn default() -> Self {
        Self { c: 10.0, epochs: 30, seed: 7, regions: "full,object".to_string(), top_k: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub thresholds: Vec<f64>,
    /// Count a prediction the pipeline could not produce as a miss instead
    /// of skipping it.
    pub count_absent_as_miss: bool,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { thresholds: vec![0.3, 0.5, 0.7], count_absent_as_miss: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub clusters: usize,
    pub raster: bool,
    pub width: f64,
    pub height: f64,
    pub jitter: f64,
    pub noise: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let core = boxtransfer_core::synthetic::SynthConfig::default();
        Self {
            seed: core.seed,
            n_train: core.n_train,
            n_test: core.n_test,
            clusters: core.n_clusters,
            raster: core.raster,
            width: core.image_size.width,
            height: core.image_size.height,
            jitter: core.box_jitter,
            noise: core.feature_noise,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Record the merged configuration alongside the outputs.
    pub fn write_effective(&self, output_dir: &Path) -> Result<PathBuf> {
        let path = output_dir.join("effective-config.toml");
        fs::write(&path, self.to_toml())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// First present value wins: flag, then config file entry. `what` names the
/// flag in the error when neither is given.
pub fn resolve_path(
    flag: Option<PathBuf>,
    config: Option<&PathBuf>,
    what: &str,
) -> Result<PathBuf> {
    flag.or_else(|| config.cloned())
        .with_context(|| format!("missing required input: pass {what} or set it in the config file"))
}

/// Inputs must exist before a run starts touching outputs.
pub fn check_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        anyhow::bail!("path does not exist: {}", path.display());
    }
    Ok(())
}
