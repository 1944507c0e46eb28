//! evaluate: score localization and prediction files against manifest
//! annotations. Every run first replays the ground truth through the scorer
//! and refuses to report if that does not come back at exactly 100%.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use boxtransfer_core::evaluation::{
    accuracy, pcp_with, HitRule, PcpReport, RegionPredictions, OBJECT_REGION,
};
use boxtransfer_core::features::{DistanceMetric, Stage};
use boxtransfer_core::index::{build_index, AnnotatedImage, TrainingIndex};
use serde_json::json;

use crate::config::{check_exists, resolve_path};
use crate::report::{
    pcp_to_json, render_accuracy_text, render_pcp_text, AccuracyRow, PcpSource,
};
use crate::{dataset, locfile, predfile, Ctx, OutputFormat};

#[derive(clap::Args)]
pub struct Args {
    /// Annotated manifest to score against.
    #[arg(long, value_name = "FILE")]
    test_manifest: Option<PathBuf>,
    /// Localization result file, optionally labeled: LABEL=FILE or FILE.
    #[arg(long, value_name = "LABEL=FILE")]
    localizations: Vec<String>,
    /// Prediction file, optionally labeled: LABEL=FILE or FILE.
    #[arg(long, value_name = "LABEL=FILE")]
    predictions: Vec<String>,
    /// Comma-separated IoU thresholds override.
    #[arg(long, value_name = "LIST")]
    thresholds: Option<String>,
    /// Count absent region predictions as misses instead of skipping them.
    #[arg(long)]
    strict_absent: bool,
    /// Score the manifest's own annotations as a prediction source.
    #[arg(long)]
    ground_truth_as_predictions: bool,
}

/// Split `LABEL=FILE`; a bare path labels itself by file stem.
fn parse_source(spec: &str) -> Result<(String, PathBuf)> {
    if let Some((label, path)) = spec.split_once('=') {
        if label.is_empty() || path.is_empty() {
            bail!("source `{spec}` must be LABEL=FILE or FILE");
        }
        return Ok((label.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(spec);
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    Ok((label, path))
}

fn parse_thresholds(list: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for piece in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t: f64 = piece
            .parse()
            .with_context(|| format!("--thresholds: `{piece}` is not a number"))?;
        out.push(t);
    }
    if out.is_empty() {
        bail!("--thresholds lists no values");
    }
    Ok(out)
}

/// The manifest's own annotations, shaped as a prediction set.
fn annotations_as_predictions(records: &[AnnotatedImage]) -> RegionPredictions {
    records
        .iter()
        .map(|rec| {
            let mut regions = BTreeMap::new();
            regions.insert(OBJECT_REGION.to_string(), rec.object_box);
            for (name, b) in &rec.part_boxes {
                regions.insert(name.clone(), *b);
            }
            (rec.id.clone(), regions)
        })
        .collect()
}

/// Ground truth scored against itself must be exactly 100% wherever any
/// sample was evaluated.
fn check_ground_truth_self(index: &TrainingIndex, thresholds: &[f64]) -> Result<()> {
    let preds = annotations_as_predictions(index.records());
    let report = pcp_with(&preds, index, thresholds, HitRule::Closed, false)
        .context("scoring the ground truth against itself")?;
    for region in report.regions() {
        if region.evaluated == 0 {
            continue;
        }
        for (t, p) in thresholds.iter().zip(&region.percentages) {
            if *p != 100.0 {
                bail!(
                    "ground-truth self-check failed: region `{}` scored {p}% at iou>={t}",
                    region.region
                );
            }
        }
    }
    Ok(())
}

/// Hit rates must not grow as the threshold does.
fn check_monotone(label: &str, report: &PcpReport) -> Result<()> {
    let mut order: Vec<usize> = (0..report.thresholds().len()).collect();
    order.sort_by(|a, b| report.thresholds()[*a].total_cmp(&report.thresholds()[*b]));
    for region in report.regions() {
        for pair in order.windows(2) {
            let (lo, hi) = (region.percentages[pair[0]], region.percentages[pair[1]]);
            if hi > lo {
                bail!(
                    "monotonicity check failed for `{label}`: region `{}` rises from \
                     {lo}% to {hi}% as the threshold grows",
                    region.region
                );
            }
        }
    }
    Ok(())
}

fn score_source(
    label: &str,
    path: &Path,
    index: &TrainingIndex,
    thresholds: &[f64],
    strict_absent: bool,
) -> Result<PcpSource> {
    check_exists(path)?;
    let records = locfile::read(path)?;
    let preds = locfile::to_predictions(&records);
    let report = pcp_with(&preds, index, thresholds, HitRule::Closed, strict_absent)
        .with_context(|| format!("scoring `{label}` ({})", path.display()))?;
    check_monotone(label, &report)?;
    Ok(PcpSource { label: label.to_string(), report })
}

pub fn run(args: Args, ctx: &mut Ctx) -> Result<()> {
    if let Some(list) = &args.thresholds {
        ctx.cfg.evaluation.thresholds = parse_thresholds(list)?;
    }
    if args.strict_absent {
        ctx.cfg.evaluation.count_absent_as_miss = true;
    }
    let test_path = resolve_path(
        args.test_manifest,
        ctx.cfg.paths.test_manifest.as_ref(),
        "--test-manifest",
    )?;
    check_exists(&test_path)?;
    let thresholds = ctx.cfg.evaluation.thresholds.clone();
    let strict_absent = ctx.cfg.evaluation.count_absent_as_miss;

    let (records, provider) = dataset::load_annotations(&test_path)?;
    let index = build_index(records, &provider, &[Stage::FullImage], DistanceMetric::Cosine)
        .context("indexing the manifest annotations")?;
    check_ground_truth_self(&index, &thresholds)?;
    ctx.cfg.write_effective(&ctx.output_dir)?;

    let mut loc_sources: Vec<(String, PathBuf)> = Vec::new();
    for spec in &args.localizations {
        loc_sources.push(parse_source(spec)?);
    }
    let mut pred_sources: Vec<(String, PathBuf)> = Vec::new();
    for spec in &args.predictions {
        pred_sources.push(parse_source(spec)?);
    }
    let mut labels: Vec<&str> = loc_sources
        .iter()
        .chain(&pred_sources)
        .map(|(l, _)| l.as_str())
        .collect();
    labels.sort_unstable();
    if let Some(dup) = labels.windows(2).find(|w| w[0] == w[1]) {
        bail!("source label `{}` is used twice; disambiguate with LABEL=FILE", dup[0]);
    }

    let mut pcp_sources = Vec::new();
    if args.ground_truth_as_predictions {
        let preds = annotations_as_predictions(index.records());
        let report = pcp_with(&preds, &index, &thresholds, HitRule::Closed, strict_absent)
            .context("scoring the ground truth as a prediction source")?;
        check_monotone("ground-truth", &report)?;
        pcp_sources.push(PcpSource { label: "ground-truth".to_string(), report });
    }
    for (label, path) in &loc_sources {
        pcp_sources.push(score_source(label, path, &index, &thresholds, strict_absent)?);
    }

    let mut accuracy_rows = Vec::new();
    for (label, path) in &pred_sources {
        check_exists(path)?;
        let preds = predfile::read(path)?;
        let map: BTreeMap<String, String> =
            preds.iter().map(|p| (p.id.clone(), p.class.clone())).collect();
        if map.len() != preds.len() {
            bail!("prediction file {} repeats an id", path.display());
        }
        let percent = accuracy(&map, &index)
            .with_context(|| format!("scoring `{label}` ({})", path.display()))?;
        accuracy_rows.push(AccuracyRow { label: label.clone(), percent, count: map.len() });
    }

    let mut text = String::new();
    if !pcp_sources.is_empty() {
        text.push_str(&render_pcp_text(&pcp_sources));
    }
    if !accuracy_rows.is_empty() {
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&render_accuracy_text(&accuracy_rows));
    }
    if text.is_empty() {
        text.push_str("no sources given; only the ground-truth self-check ran\n");
    }
    text.push_str("\nchecks: ground-truth self-test passed, monotonicity passed\n");

    let doc = json!({
        "command": "evaluate",
        "thresholds": thresholds,
        "count_absent_as_miss": strict_absent,
        "checks": {"ground_truth_self": "passed", "monotonic": "passed"},
        "pcp": pcp_sources.iter().map(pcp_to_json).collect::<Vec<_>>(),
        "accuracy": accuracy_rows
            .iter()
            .map(|r| crate::report::AccuracyJson {
                source: r.label.clone(),
                percent: r.percent,
                count: r.count,
            })
            .collect::<Vec<_>>(),
    });

    let report_path = match ctx.format {
        OutputFormat::Text => {
            let p = ctx.output_dir.join("evaluation-report.txt");
            std::fs::write(&p, &text)
                .with_context(|| format!("writing {}", p.display()))?;
            p
        }
        OutputFormat::Structured => {
            let p = ctx.output_dir.join("evaluation-report.json");
            let mut body = serde_json::to_string_pretty(&doc)?;
            body.push('\n');
            std::fs::write(&p, body)
                .with_context(|| format!("writing {}", p.display()))?;
            p
        }
    };
    eprintln!("report written to {}", report_path.display());
    ctx.emit(text.trim_end().to_string(), doc);
    Ok(())
}
