//! Overlap metrics between a predicted and a ground-truth mask, per-category
//! aggregation and tabular reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Mask3D;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction grid {pred:?} does not match ground truth grid {gt:?}")]
    ShapeMismatch { pred: [usize; 3], gt: [usize; 3] },
    #[error("cannot aggregate an empty list of reports")]
    EmptyList,
}

/// Voxel confusion counts with the ground truth as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(pred: &Mask3D, gt: &Mask3D) -> Result<ConfusionCounts, EvalError> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::ShapeMismatch {
            pred: pred.dims(),
            gt: gt.dims(),
        });
    }
    Ok(confusion_bits(pred.bits(), gt.bits()))
}

/// Counts over two equally long 0/1 buffers.
pub fn confusion_bits(pred: &[u8], gt: &[u8]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Which ratios had a zero denominator and were defined as 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct UndefinedFlags {
    pub dice: bool,
    pub iou: bool,
    pub accuracy: bool,
    pub precision: bool,
    pub recall: bool,
}

impl UndefinedFlags {
    pub fn any(&self) -> bool {
        self.dice || self.iou || self.accuracy || self.precision || self.recall
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dice: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub counts: ConfusionCounts,
    pub undefined: UndefinedFlags,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        // only reachable when every term in the numerator is zero too
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Dice, IoU, accuracy, precision and recall from confusion counts.
pub fn metrics(c: &ConfusionCounts) -> MetricReport {
    let (dice, ud) = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    let (iou, ui) = ratio(c.tp, c.tp + c.fp + c.fn_);
    let (accuracy, ua) = ratio(c.tp + c.tn, c.total());
    let (precision, up) = ratio(c.tp, c.tp + c.fp);
    let (recall, ur) = ratio(c.tp, c.tp + c.fn_);
    MetricReport {
        dice,
        iou,
        accuracy,
        precision,
        recall,
        counts: *c,
        undefined: UndefinedFlags {
            dice: ud,
            iou: ui,
            accuracy: ua,
            precision: up,
            recall: ur,
        },
    }
}

/// Per-scan identity linking the two overlap scores.
pub fn iou_from_dice(dice: f64) -> f64 {
    dice / (2.0 - dice)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricMeans {
    pub dice: f64,
    pub iou: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One report row: a (category, tool) pair over several scans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAggregate {
    pub category: String,
    pub tool: String,
    pub per_scan: Vec<MetricReport>,
    /// `None` only when every scan of the row failed.
    pub means: Option<MetricMeans>,
    /// One message per failed scan.
    pub failures: Vec<String>,
    /// Configuration footnotes (baseline mode and f, backend identity, ...).
    pub notes: Vec<String>,
}

impl CategoryAggregate {
    /// A row whose scans all failed.
    pub fn failed(category: &str, tool: &str, failures: Vec<String>) -> Self {
        Self {
            category: category.into(),
            tool: tool.into(),
            per_scan: Vec::new(),
            means: None,
            failures,
            notes: Vec::new(),
        }
    }
}

/// Unweighted mean of each metric over the scans.
pub fn aggregate(reports: &[MetricReport], category: &str, tool: &str) -> Result<CategoryAggregate, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let n = reports.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Ok(CategoryAggregate {
        category: category.into(),
        tool: tool.into(),
        per_scan: reports.to_vec(),
        means: Some(MetricMeans {
            dice: mean(|r| r.dice),
            iou: mean(|r| r.iou),
            accuracy: mean(|r| r.accuracy),
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
        }),
        failures: Vec::new(),
        notes: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// Three decimals, rounding half-up at the fourth.
pub fn fmt3(v: f64) -> String {
    // the small bias keeps decimal ties such as 0.8905 from rounding down
    // because of their binary representation
    let scaled = (v * 1000.0 + 0.5 + 1e-9).floor();
    format!("{:.3}", scaled / 1000.0)
}

pub const CSV_HEADER: &str = "category,tool,n,dice,iou,accuracy,recall,precision";

/// Renders rows sorted by category then tool.
///
/// CSV rows whose scans all failed carry `n = 0` and empty metric fields. The
/// Markdown table mirrors the metric column order Dice, IoU, Acc, Recall,
/// Prec and lists configuration notes and failures as footnotes.
pub fn emit_report(aggregates: &[CategoryAggregate], format: ReportFormat) -> String {
    let mut rows: Vec<&CategoryAggregate> = aggregates.iter().collect();
    rows.sort_by(|a, b| (&a.category, &a.tool).cmp(&(&b.category, &b.tool)));
    match format {
        ReportFormat::Csv => emit_csv(&rows),
        ReportFormat::Markdown => emit_markdown(&rows),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn emit_csv(rows: &[&CategoryAggregate]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let metrics = match &r.means {
            Some(m) => [m.dice, m.iou, m.accuracy, m.recall, m.precision]
                .iter()
                .map(|&v| fmt3(v))
                .collect::<Vec<_>>()
                .join(","),
            None => ",,,,".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{}",
            csv_field(&r.category),
            csv_field(&r.tool),
            r.per_scan.len(),
            metrics
        );
    }
    out
}

fn emit_markdown(rows: &[&CategoryAggregate]) -> String {
    let mut out = String::new();
    out.push_str("| Category | Tool | n | Dice | IoU | Acc | Recall | Prec |\n");
    out.push_str("|---|---|---:|---:|---:|---:|---:|---:|\n");
    let mut notes: Vec<String> = Vec::new();
    for r in rows {
        let mut marks = String::new();
        for note in r.notes.iter().chain(&r.failures) {
            let pos = match notes.iter().position(|n| n == note) {
                Some(p) => p,
                None => {
                    notes.push(note.clone());
                    notes.len() - 1
                }
            };
            let _ = write!(marks, "[^{}]", pos + 1);
        }
        let cells = match &r.means {
            Some(m) => [m.dice, m.iou, m.accuracy, m.recall, m.precision]
                .iter()
                .map(|&v| fmt3(v))
                .collect::<Vec<_>>()
                .join(" | "),
            None => "error | error | error | error | error".to_string(),
        };
        let flag = if r.failures.is_empty() {
            String::new()
        } else {
            format!(" ({} failed)", r.failures.len())
        };
        let _ = writeln!(
            out,
            "| {} | {}{} | {}{} | {} |",
            r.category,
            r.tool,
            marks,
            r.per_scan.len(),
            flag,
            cells
        );
    }
    if !notes.is_empty() {
        out.push('\n');
        for (i, n) in notes.iter().enumerate() {
            let _ = writeln!(out, "[^{}]: {}", i + 1, n);
        }
    }
    out
}
