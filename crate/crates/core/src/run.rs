//! Run directories: `<out>/<run-id>/` holding `report.json`, the emitted
//! tables and plots, one file per generation under `generations/`, and the
//! gateway cache under `cache/`.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::Dataset;
use crate::evaluator::{DatasetEvaluation, EvalError, Evaluator, GenerationRef, RunConfig};
use crate::gateway::Gateway;
use crate::prompt::PromptEngine;
use crate::reporter::{self, EvaluationReport, ReportError, TableFormat};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run id `{0}`: use letters, digits, `-`, `_` or `.`")]
    InvalidRunId(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    /// `out_dir/run_id`. The id must be a single plain path component so
    /// that nothing is written outside `out_dir`.
    pub fn new(out_dir: &Path, run_id: &str) -> Result<Self, RunError> {
        let ok = !run_id.is_empty()
            && run_id != "."
            && run_id != ".."
            && run_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !ok {
            return Err(RunError::InvalidRunId(run_id.to_string()));
        }
        Ok(Self {
            root: out_dir.join(run_id),
        })
    }

    /// Uses an existing run directory as is.
    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn table(&self, format: TableFormat) -> PathBuf {
        match format {
            TableFormat::Json => self.root.join("table.json"),
            f => self.root.join(format!("report.{}", f.extension())),
        }
    }

    pub fn violin_json(&self) -> PathBuf {
        self.root.join("violin.json")
    }

    pub fn summary_md(&self) -> PathBuf {
        self.root.join("summary.md")
    }

    pub fn scores_svg(&self) -> PathBuf {
        self.root.join("scores.svg")
    }

    pub fn generations_dir(&self) -> PathBuf {
        self.root.join("generations")
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }
}

/// Emits every derived artifact of `report` into the run directory and
/// returns the written paths. Tables and plots are skipped when no item was
/// scored; the summary is always written.
pub fn emit_reports(layout: &RunLayout, report: &EvaluationReport) -> Result<Vec<PathBuf>, ReportError> {
    let mut written = Vec::new();
    if !report.item_scores.is_empty() {
        for format in [TableFormat::Csv, TableFormat::Json, TableFormat::Markdown] {
            let path = layout.table(format);
            reporter::emit_table(report, format, &path)?;
            written.push(path);
        }
        reporter::emit_violin_data(report, &layout.violin_json())?;
        written.push(layout.violin_json());
        reporter::write_file(&layout.scores_svg(), &reporter::render_svg(report)?)?;
        written.push(layout.scores_svg());
    }
    reporter::write_file(&layout.summary_md(), &reporter::emit_summary(report))?;
    written.push(layout.summary_md());
    Ok(written)
}

/// Persists generations and `report.json`, then emits the derived reports.
pub fn write_run(layout: &RunLayout, evaluation: &DatasetEvaluation) -> Result<Vec<PathBuf>, ReportError> {
    for run in &evaluation.runs {
        let path = layout
            .root
            .join(GenerationRef::relative_path(run.item_id, run.iteration));
        let mut text = serde_json::to_string_pretty(run).expect("generation serializes");
        text.push('\n');
        reporter::write_file(&path, &text)?;
    }
    reporter::write_file(&layout.report_json(), &evaluation.report.to_json())?;
    let mut written = vec![layout.report_json()];
    written.extend(emit_reports(layout, &evaluation.report)?);
    Ok(written)
}

/// Evaluates `dataset` and writes all artifacts under `layout`.
pub fn execute_run(
    dataset: &Dataset,
    cfg: &RunConfig,
    gateway: &Gateway,
    prompts: &PromptEngine,
    layout: &RunLayout,
) -> Result<DatasetEvaluation, RunError> {
    let evaluation = Evaluator::new(gateway, prompts).evaluate_dataset(dataset, cfg)?;
    write_run(layout, &evaluation)?;
    Ok(evaluation)
}
