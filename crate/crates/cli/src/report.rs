//! Report rendering: aligned plain-text tables or a structured JSON
//! document, chosen by the --format flag.

use boxtransfer_core::evaluation::PcpReport;
use serde::Serialize;

pub struct PcpSource {
    pub label: String,
    pub report: PcpReport,
}

pub struct AccuracyRow {
    pub label: String,
    pub percent: f64,
    pub count: usize,
}

#[derive(Serialize)]
pub struct RegionJson {
    pub region: String,
    pub evaluated: usize,
    pub skipped: usize,
    pub percentages: Vec<f64>,
}

#[derive(Serialize)]
pub struct PcpJson {
    pub source: String,
    pub thresholds: Vec<f64>,
    pub regions: Vec<RegionJson>,
}

#[derive(Serialize)]
pub struct AccuracyJson {
    pub source: String,
    pub percent: f64,
    pub count: usize,
}

pub fn pcp_to_json(source: &PcpSource) -> PcpJson {
    PcpJson {
        source: source.label.clone(),
        thresholds: source.report.thresholds().to_vec(),
        regions: source
            .report
            .regions()
            .iter()
            .map(|r| RegionJson {
                region: r.region.clone(),
                evaluated: r.evaluated,
                skipped: r.skipped,
                percentages: r.percentages.clone(),
            })
            .collect(),
    }
}

/// Left-align the first `label_columns` columns, right-align the rest, two
/// spaces between columns.
pub fn render_table(headers: &[String], rows: &[Vec<String>], label_columns: usize) -> String {
    let columns = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            if i < label_columns {
                out.push_str(cell);
                if i + 1 < columns {
                    out.push_str(&" ".repeat(widths[i] - cell.len()));
                }
            } else {
                out.push_str(&" ".repeat(widths[i] - cell.len()));
                out.push_str(cell);
            }
        }
        out.push('\n');
    };
    push_row(headers);
    for row in rows {
        push_row(row);
    }
    out
}

pub fn render_pcp_text(sources: &[PcpSource]) -> String {
    let Some(first) = sources.first() else {
        return String::new();
    };
    let mut headers: Vec<String> =
        ["source", "region", "evaluated", "skipped"].iter().map(|s| s.to_string()).collect();
    for t in first.report.thresholds() {
        headers.push(format!("iou>={t:.2}"));
    }
    let mut rows = Vec::new();
    for source in sources {
        for region in source.report.regions() {
            let mut row = vec![
                source.label.clone(),
                region.region.clone(),
                region.evaluated.to_string(),
                region.skipped.to_string(),
            ];
            for p in &region.percentages {
                row.push(format!("{p:.1}"));
            }
            rows.push(row);
        }
    }
    let mut out = String::from("localization: PCP (%) per region and IoU threshold\n\n");
    out.push_str(&render_table(&headers, &rows, 2));
    out
}

pub fn render_accuracy_text(rows: &[AccuracyRow]) -> String {
    if rows.is_empty() {
        return String::new();
    }
    let headers: Vec<String> =
        ["source", "accuracy(%)", "predictions"].iter().map(|s| s.to_string()).collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.label.clone(), format!("{:.1}", r.percent), r.count.to_string()])
        .collect();
    let mut out = String::from("recognition: classification accuracy\n\n");
    out.push_str(&render_table(&headers, &body, 1));
    out
}
