//! Report assembly and emission: per-item score tables, plot-ready violin
//! data, a Markdown summary and a basic SVG strip plot.
//!
//! `report.json` is the source of truth; every number in the other artifacts
//! is either copied from it or recomputed from it by [`Aggregates::compute`].

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::evaluator::{ItemScore, QuestionSet, RunConfig};

/// Items whose iteration SD reaches this value count as inconsistent.
pub const CONSISTENCY_SD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report contains no scored items")]
    EmptyReport,
    #[error("writing {}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("parsing {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperGroup {
    pub paper_id: String,
    pub first_item: u32,
    pub last_item: u32,
    pub item_count: usize,
}

impl PaperGroup {
    /// Item id range of every paper with items, ordered by first item.
    pub fn from_dataset(d: &Dataset) -> Vec<PaperGroup> {
        let mut groups: Vec<PaperGroup> = d
            .papers
            .iter()
            .filter_map(|p| {
                let ids = p.items.iter().map(|i| i.item_id);
                Some(PaperGroup {
                    paper_id: p.paper_id.clone(),
                    first_item: ids.clone().min()?,
                    last_item: ids.max()?,
                    item_count: p.items.len(),
                })
            })
            .collect();
        groups.sort_by_key(|g| g.first_item);
        groups
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub item_id: u32,
    pub paper_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub scored_items: usize,
    /// Mean of the per-item means; `None` when nothing was scored.
    pub overall_mean: Option<f64>,
    pub flagged_count: usize,
    pub flagged_share: f64,
    pub max_sd: f64,
    /// Items with SD >= [`CONSISTENCY_SD`].
    pub inconsistent_count: usize,
}

impl Aggregates {
    pub fn compute(scores: &[ItemScore]) -> Self {
        let n = scores.len();
        let flagged_count = scores.iter().filter(|s| s.flagged).count();
        Self {
            scored_items: n,
            overall_mean: (n > 0).then(|| scores.iter().map(|s| s.stats.mean).sum::<f64>() / n as f64),
            flagged_count,
            flagged_share: if n > 0 { flagged_count as f64 / n as f64 } else { 0.0 },
            max_sd: scores.iter().map(|s| s.stats.sd).fold(0.0, f64::max),
            inconsistent_count: scores.iter().filter(|s| s.stats.sd >= CONSISTENCY_SD).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_config: RunConfig,
    /// Ascending by item id.
    pub item_scores: Vec<ItemScore>,
    pub per_paper_groups: Vec<PaperGroup>,
    pub errors: Vec<ItemError>,
    pub aggregates: Aggregates,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub question_sets: Vec<QuestionSet>,
}

impl EvaluationReport {
    pub fn assemble(
        run_config: RunConfig,
        per_paper_groups: Vec<PaperGroup>,
        mut item_scores: Vec<ItemScore>,
        mut errors: Vec<ItemError>,
        question_sets: Vec<QuestionSet>,
    ) -> Self {
        item_scores.sort_by_key(|s| s.item_id);
        errors.sort_by_key(|e| e.item_id);
        Self {
            aggregates: Aggregates::compute(&item_scores),
            run_config,
            item_scores,
            per_paper_groups,
            errors,
            question_sets,
        }
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ItemScore> {
        self.item_scores.iter().filter(|s| s.flagged)
    }

    fn iterations(&self) -> usize {
        self.item_scores
            .iter()
            .map(|s| s.stats.scores.len())
            .max()
            .unwrap_or(self.run_config.iterations as usize)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|source| ReportError::IoFailure {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ReportError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
    Markdown,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
            TableFormat::Markdown => "md",
        }
    }
}

/// Six decimals, without a sign on values that round to zero.
pub fn fixed6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per scored item: item_id, paper_id, each score, mean, sd, flagged.
pub fn render_table(r: &EvaluationReport, format: TableFormat) -> Result<String, ReportError> {
    if r.item_scores.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    let n = r.iterations();
    let score_cols: Vec<String> = (1..=n).map(|i| format!("score_{i}")).collect();
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            writeln!(out, "item_id,paper_id,{},mean,sd,flagged", score_cols.join(",")).unwrap();
            for s in &r.item_scores {
                let scores: Vec<String> = s.stats.scores.iter().map(|x| fixed6(*x)).collect();
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    s.item_id,
                    csv_field(&s.paper_id),
                    scores.join(","),
                    fixed6(s.stats.mean),
                    fixed6(s.stats.sd),
                    s.flagged
                )
                .unwrap();
            }
        }
        TableFormat::Json => {
            // Built by hand to keep keys sorted and numbers at six decimals.
            out.push_str("[\n");
            for (i, s) in r.item_scores.iter().enumerate() {
                let scores: Vec<String> = s.stats.scores.iter().map(|x| fixed6(*x)).collect();
                write!(
                    out,
                    "  {{\"flagged\":{},\"item_id\":{},\"mean\":{},\"paper_id\":{},\"scores\":[{}],\"sd\":{}}}",
                    s.flagged,
                    s.item_id,
                    fixed6(s.stats.mean),
                    serde_json::to_string(&s.paper_id).unwrap(),
                    scores.join(","),
                    fixed6(s.stats.sd)
                )
                .unwrap();
                out.push_str(if i + 1 < r.item_scores.len() { ",\n" } else { "\n" });
            }
            out.push_str("]\n");
        }
        TableFormat::Markdown => {
            writeln!(
                out,
                "| item_id | paper_id | {} | mean | sd | flagged |",
                score_cols.join(" | ")
            )
            .unwrap();
            writeln!(out, "|---|---|{}---|---|---|", "---|".repeat(n)).unwrap();
            for s in &r.item_scores {
                let scores: Vec<String> = s.stats.scores.iter().map(|x| fixed6(*x)).collect();
                writeln!(
                    out,
                    "| {} | {} | {} | {} | {} | {} |",
                    s.item_id,
                    s.paper_id.replace('|', "\\|"),
                    scores.join(" | "),
                    fixed6(s.stats.mean),
                    fixed6(s.stats.sd),
                    s.flagged
                )
                .unwrap();
            }
        }
    }
    Ok(out)
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), ReportError> {
    let io_err = |source| ReportError::IoFailure {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    fs::write(path, contents).map_err(io_err)
}

pub fn emit_table(r: &EvaluationReport, format: TableFormat, path: &Path) -> Result<(), ReportError> {
    write_file(path, &render_table(r, format)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinItem {
    pub item_id: u32,
    pub paper_id: String,
    pub scores: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinData {
    pub flag_threshold: f64,
    pub groups: Vec<PaperGroup>,
    pub items: Vec<ViolinItem>,
}

impl ViolinData {
    pub fn from_report(r: &EvaluationReport) -> Self {
        Self {
            flag_threshold: r.run_config.flag_threshold,
            groups: r.per_paper_groups.clone(),
            items: r
                .item_scores
                .iter()
                .map(|s| ViolinItem {
                    item_id: s.item_id,
                    paper_id: s.paper_id.clone(),
                    scores: s.stats.scores.clone(),
                    mean: s.stats.mean,
                    sd: s.stats.sd,
                    flagged: s.flagged,
                })
                .collect(),
        }
    }
}

pub fn render_violin_data(r: &EvaluationReport) -> Result<String, ReportError> {
    if r.item_scores.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    let mut s = serde_json::to_string_pretty(&ViolinData::from_report(r)).expect("violin data serializes");
    s.push('\n');
    Ok(s)
}

pub fn emit_violin_data(r: &EvaluationReport, path: &Path) -> Result<(), ReportError> {
    write_file(path, &render_violin_data(r)?)
}

pub fn emit_summary(r: &EvaluationReport) -> String {
    let cfg = &r.run_config;
    let agg = Aggregates::compute(&r.item_scores);
    let mut out = String::new();
    writeln!(out, "# Evaluation summary: `{}`\n", cfg.run_id).unwrap();
    writeln!(
        out,
        "- Model: `{}` (temperature {}), {} iterations per item",
        cfg.model.model_name, cfg.model.temperature, cfg.iterations
    )
    .unwrap();
    writeln!(out, "- Items scored: {} (errors: {})", agg.scored_items, r.errors.len()).unwrap();
    match agg.overall_mean {
        Some(m) => writeln!(out, "- Aggregate mean cosine similarity: {}", fixed6(m)).unwrap(),
        None => writeln!(out, "- No items were scored; aggregate mean is undefined").unwrap(),
    }
    writeln!(out, "- Maximum per-item SD: {}", fixed6(agg.max_sd)).unwrap();
    writeln!(
        out,
        "- {} items with SD ≥ {} (of {})",
        agg.inconsistent_count, CONSISTENCY_SD, agg.scored_items
    )
    .unwrap();
    writeln!(
        out,
        "- {} flagged items (mean < {})",
        agg.flagged_count, cfg.flag_threshold
    )
    .unwrap();

    if agg.flagged_count > 0 {
        writeln!(out, "\n## Flagged items\n").unwrap();
        for s in r.flagged() {
            writeln!(
                out,
                "- item {} ({}): mean {}, sd {}",
                s.item_id,
                s.paper_id,
                fixed6(s.stats.mean),
                fixed6(s.stats.sd)
            )
            .unwrap();
        }
    }
    if !r.per_paper_groups.is_empty() {
        writeln!(out, "\n## Papers\n").unwrap();
        for g in &r.per_paper_groups {
            let noun = if g.item_count == 1 { "item" } else { "items" };
            writeln!(
                out,
                "- {}: items {}–{} ({} {noun})",
                g.paper_id, g.first_item, g.last_item, g.item_count
            )
            .unwrap();
        }
    }
    if !r.errors.is_empty() {
        writeln!(out, "\n## Errors\n").unwrap();
        for e in &r.errors {
            writeln!(out, "- item {} ({}): {}", e.item_id, e.paper_id, e.message).unwrap();
        }
    }
    out
}

/// Strip plot: one column per item, one dot per iteration score, a tick at
/// the item mean and a dashed line at the flag threshold.
pub fn render_svg(r: &EvaluationReport) -> Result<String, ReportError> {
    if r.item_scores.is_empty() {
        return Err(ReportError::EmptyReport);
    }
    const LEFT: f64 = 50.0;
    const TOP: f64 = 20.0;
    const PLOT_H: f64 = 240.0;
    const COL_W: f64 = 18.0;
    let n = r.item_scores.len() as f64;
    let width = LEFT + COL_W * n + 20.0;
    let height = TOP + PLOT_H + 40.0;
    let lo = r
        .item_scores
        .iter()
        .flat_map(|s| s.stats.scores.iter().copied())
        .fold(0.0f64, f64::min)
        .max(-1.0);
    let y = |v: f64| TOP + (1.0 - (v - lo) / (1.0 - lo)) * PLOT_H;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    for tick in [lo, (lo + 1.0) / 2.0, 1.0] {
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{tick:.2}</text>"#,
            LEFT - 6.0,
            y(tick) + 3.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r##"<line x1="{LEFT}" y1="{t:.2}" x2="{:.1}" y2="{t:.2}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
        width - 20.0,
        t = y(r.run_config.flag_threshold)
    )
    .unwrap();
    for (col, s) in r.item_scores.iter().enumerate() {
        let cx = LEFT + COL_W * (col as f64 + 0.5);
        let fill = if s.flagged { "#c0392b" } else { "#2c3e50" };
        for v in &s.stats.scores {
            writeln!(
                svg,
                r#"<circle cx="{cx:.1}" cy="{:.2}" r="2.5" fill="{fill}" fill-opacity="0.6"/>"#,
                y(*v)
            )
            .unwrap();
        }
        let my = y(s.stats.mean);
        writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{my:.2}" x2="{:.1}" y2="{my:.2}" stroke="{fill}" stroke-width="2"/>"#,
            cx - 6.0,
            cx + 6.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + PLOT_H + 14.0,
            s.item_id
        )
        .unwrap();
    }
    // group separators
    for g in r.per_paper_groups.iter().skip(1) {
        if let Some(col) = r.item_scores.iter().position(|s| s.item_id >= g.first_item) {
            let x = LEFT + COL_W * col as f64;
            writeln!(
                svg,
                r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#999"/>"##,
                TOP + PLOT_H
            )
            .unwrap();
        }
    }
    for g in &r.per_paper_groups {
        let cols: Vec<usize> = r
            .item_scores
            .iter()
            .enumerate()
            .filter(|(_, s)| s.paper_id == g.paper_id)
            .map(|(i, _)| i)
            .collect();
        if let (Some(first), Some(last)) = (cols.first(), cols.last()) {
            let cx = LEFT + COL_W * ((first + last) as f64 / 2.0 + 0.5);
            writeln!(
                svg,
                r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                TOP + PLOT_H + 30.0,
                xml_escape(&g.paper_id)
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
