//! Benchmark dataset: paper summaries, raw questionnaire data and the
//! reference passages generated analyses are scored against.
//!
//! On disk a dataset is a directory:
//!
//! ```text
//! dataset.json            manifest, schema_version "1"
//! <paper-dir>/summary.txt
//! <paper-dir>/raw_qa.jsonl  one RawQaPair per line
//! <paper-dir>/items.jsonl   one BenchmarkItem per line
//! ```

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "dataset.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const RAW_QA_FILE: &str = "raw_qa.jsonl";
pub const ITEMS_FILE: &str = "items.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub participant_id: String,
    pub answer_text: String,
}

/// One open-ended question together with every participant's answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQaPair {
    pub question_id: String,
    pub question_text: String,
    #[serde(default)]
    pub responses: Vec<Response>,
}

/// One scoring unit: a findings passage from a paper plus everything the
/// analysis prompt needs to regenerate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub item_id: u32,
    pub paper_id: String,
    pub reference_passage: String,
    #[serde(default)]
    pub preceding_paragraph: String,
    #[serde(default)]
    pub themes: Vec<String>,
    pub raw_qa_refs: Vec<String>,
    pub target_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub title: String,
    pub summary: String,
    pub raw_qa: Vec<RawQaPair>,
    pub items: Vec<BenchmarkItem>,
}

impl PaperRecord {
    pub fn question(&self, question_id: &str) -> Option<&RawQaPair> {
        self.raw_qa.iter().find(|q| q.question_id == question_id)
    }

    /// Resolves an item's `raw_qa_refs` in reference order. Unknown ids are
    /// skipped; a validated dataset has none.
    pub fn referenced_qa(&self, item: &BenchmarkItem) -> Vec<&RawQaPair> {
        item.raw_qa_refs.iter().filter_map(|id| self.question(id)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema_version: String,
    #[serde(default)]
    pub name: String,
    /// Themes substituted for items whose own theme list is empty.
    #[serde(default)]
    pub default_themes: Vec<String>,
    pub papers: Vec<PaperRecord>,
}

impl Dataset {
    pub fn item_count(&self) -> usize {
        self.papers.iter().map(|p| p.items.len()).sum()
    }

    /// All items with their owning paper, ascending by item id.
    pub fn items(&self) -> Vec<(&PaperRecord, &BenchmarkItem)> {
        let mut all: Vec<_> = self
            .papers
            .iter()
            .flat_map(|p| p.items.iter().map(move |i| (p, i)))
            .collect();
        all.sort_by_key(|(_, i)| i.item_id);
        all
    }

    pub fn paper(&self, paper_id: &str) -> Option<&PaperRecord> {
        self.papers.iter().find(|p| p.paper_id == paper_id)
    }

    pub fn find_item(&self, item_id: u32) -> Option<(&PaperRecord, &BenchmarkItem)> {
        self.papers
            .iter()
            .find_map(|p| p.items.iter().find(|i| i.item_id == item_id).map(|i| (p, i)))
    }

    /// Themes the analysis prompt should address for `item`.
    pub fn themes_for<'a>(&'a self, item: &'a BenchmarkItem) -> &'a [String] {
        if item.themes.is_empty() {
            &self.default_themes
        } else {
            &item.themes
        }
    }

    /// Keeps only the listed papers. The result may contain no items.
    pub fn select_papers(&self, paper_ids: &[String]) -> Dataset {
        Dataset {
            papers: self
                .papers
                .iter()
                .filter(|p| paper_ids.contains(&p.paper_id))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueKind {
    Invariant,
    DanglingReference { item_id: u32, question_id: String },
    DuplicateId { what: String, id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub severity: Severity,
    /// Human readable position, e.g. `paper1/item 5/target_tokens`.
    pub location: String,
    pub message: String,
    #[serde(flatten)]
    pub kind: IssueKind,
}

impl ValidationIssue {
    fn error(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
            kind: IssueKind::Invariant,
        }
    }

    fn warning(location: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            ..Self::error(location, message)
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("schema violation at {location}: {message}")]
    SchemaViolation { location: String, message: String },
    #[error("item {item_id} references unknown question `{question_id}`")]
    DanglingReference { item_id: u32, question_id: String },
    #[error("duplicate {what} id `{id}`")]
    DuplicateId { what: String, id: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl DatasetError {
    /// True when the failure is about reaching the files rather than their
    /// contents.
    pub fn is_io(&self) -> bool {
        matches!(self, DatasetError::MissingFile(_) | DatasetError::Io { .. })
    }
}

impl From<ValidationIssue> for DatasetError {
    fn from(issue: ValidationIssue) -> Self {
        match issue.kind {
            IssueKind::DanglingReference { item_id, question_id } => {
                DatasetError::DanglingReference { item_id, question_id }
            }
            IssueKind::DuplicateId { what, id } => DatasetError::DuplicateId { what, id },
            IssueKind::Invariant => DatasetError::SchemaViolation {
                location: issue.location,
                message: issue.message,
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    schema_version: String,
    #[serde(default)]
    name: String,
    #[serde(default)]
    default_themes: Vec<String>,
    papers: Vec<ManifestPaper>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestPaper {
    paper_id: String,
    title: String,
    /// Directory relative to the manifest; defaults to the paper id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dir: Option<String>,
}

fn read_file(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, label: &str) -> Result<Vec<T>, DatasetError> {
    let text = read_file(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(line).map_err(|e| DatasetError::SchemaViolation {
            location: format!("{label}:{}", lineno + 1),
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Parses the on-disk layout without checking invariants.
pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let manifest_path = path.join(MANIFEST_FILE);
    let manifest: Manifest =
        serde_json::from_str(&read_file(&manifest_path)?).map_err(|e| DatasetError::SchemaViolation {
            location: MANIFEST_FILE.to_string(),
            message: e.to_string(),
        })?;

    let mut papers = Vec::with_capacity(manifest.papers.len());
    for entry in manifest.papers {
        let dir_name = entry.dir.clone().unwrap_or_else(|| entry.paper_id.clone());
        let dir = path.join(&dir_name);
        let summary = read_file(&dir.join(SUMMARY_FILE))?;
        let raw_qa = read_jsonl(&dir.join(RAW_QA_FILE), &format!("{dir_name}/{RAW_QA_FILE}"))?;
        let items = read_jsonl(&dir.join(ITEMS_FILE), &format!("{dir_name}/{ITEMS_FILE}"))?;
        papers.push(PaperRecord {
            paper_id: entry.paper_id,
            title: entry.title,
            summary: summary.trim_end_matches('\n').to_string(),
            raw_qa,
            items,
        });
    }

    Ok(Dataset {
        schema_version: manifest.schema_version,
        name: manifest.name,
        default_themes: manifest.default_themes,
        papers,
    })
}

/// Loads and validates a dataset directory. Warnings are tolerated; the
/// first error-severity issue is returned as an error.
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let dataset = read_dataset(path)?;
    if let Some(issue) = validate_dataset(&dataset).into_iter().find(ValidationIssue::is_error) {
        return Err(issue.into());
    }
    Ok(dataset)
}

/// Writes `dataset` in the on-disk layout, one directory per paper named by
/// its paper id.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DatasetError::Io { path: p, source }
    };
    fs::create_dir_all(path).map_err(io_err(path))?;

    let manifest = Manifest {
        schema_version: dataset.schema_version.clone(),
        name: dataset.name.clone(),
        default_themes: dataset.default_themes.clone(),
        papers: dataset
            .papers
            .iter()
            .map(|p| ManifestPaper {
                paper_id: p.paper_id.clone(),
                title: p.title.clone(),
                dir: None,
            })
            .collect(),
    };
    let manifest_path = path.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    for paper in &dataset.papers {
        let dir = path.join(&paper.paper_id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let summary_path = dir.join(SUMMARY_FILE);
        fs::write(&summary_path, format!("{}\n", paper.summary)).map_err(io_err(&summary_path))?;
        write_jsonl(&dir.join(RAW_QA_FILE), &paper.raw_qa)?;
        write_jsonl(&dir.join(ITEMS_FILE), &paper.items)?;
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DatasetError> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(row).expect("row serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Checks every dataset invariant. Returns an empty list iff the dataset is
/// fully valid; issues are reported in dataset order.
pub fn validate_dataset(d: &Dataset) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();

    if d.schema_version != SCHEMA_VERSION {
        issues.push(ValidationIssue::error(
            MANIFEST_FILE,
            format!(
                "unsupported schema_version `{}` (expected `{SCHEMA_VERSION}`)",
                d.schema_version
            ),
        ));
    }
    if d.papers.is_empty() {
        issues.push(ValidationIssue::error(MANIFEST_FILE, "dataset has no papers"));
    } else if d.item_count() == 0 {
        issues.push(ValidationIssue::error(MANIFEST_FILE, "dataset has no items"));
    }
    for (i, theme) in d.default_themes.iter().enumerate() {
        if theme.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{MANIFEST_FILE}/default_themes[{i}]"),
                "theme is empty",
            ));
        }
    }

    let mut paper_ids = HashSet::new();
    let mut item_ids = HashSet::new();

    for paper in &d.papers {
        let pid = paper.paper_id.as_str();
        if pid.trim().is_empty() {
            issues.push(ValidationIssue::error(MANIFEST_FILE, "paper with empty paper_id"));
        }
        if !paper_ids.insert(pid) {
            issues.push(duplicate("paper", pid, MANIFEST_FILE.to_string()));
        }
        if paper.summary.trim().is_empty() {
            issues.push(ValidationIssue::error(
                format!("{pid}/{SUMMARY_FILE}"),
                "summary is empty",
            ));
        }

        let mut question_ids = HashSet::new();
        for qa in &paper.raw_qa {
            let loc = format!("{pid}/question {}", qa.question_id);
            if !question_ids.insert(qa.question_id.as_str()) {
                issues.push(duplicate("question", &qa.question_id, loc.clone()));
            }
            if qa.question_text.trim().is_empty() {
                issues.push(ValidationIssue::error(
                    format!("{loc}/question_text"),
                    "question text is empty",
                ));
            }
            if qa.responses.is_empty() {
                issues.push(ValidationIssue::warning(loc.clone(), "question has no responses"));
            }
            let mut participants = HashSet::new();
            for r in &qa.responses {
                if !participants.insert(r.participant_id.as_str()) {
                    issues.push(duplicate("participant", &r.participant_id, loc.clone()));
                }
            }
        }

        for item in &paper.items {
            let loc = format!("{pid}/item {}", item.item_id);
            if item.item_id == 0 {
                issues.push(ValidationIssue::error(
                    format!("{loc}/item_id"),
                    "item_id must be positive",
                ));
            }
            if !item_ids.insert(item.item_id) {
                issues.push(duplicate("item", &item.item_id.to_string(), loc.clone()));
            }
            if item.paper_id != paper.paper_id {
                issues.push(ValidationIssue::error(
                    format!("{loc}/paper_id"),
                    format!("item belongs to `{}` but names `{}`", paper.paper_id, item.paper_id),
                ));
            }
            if item.reference_passage.trim().is_empty() {
                issues.push(ValidationIssue::error(
                    format!("{loc}/reference_passage"),
                    "reference passage is empty",
                ));
            } else if item.reference_passage == item.preceding_paragraph {
                issues.push(ValidationIssue::error(
                    format!("{loc}/preceding_paragraph"),
                    "preceding paragraph equals the reference passage",
                ));
            }
            if item.preceding_paragraph.trim().is_empty() {
                issues.push(ValidationIssue::warning(
                    format!("{loc}/preceding_paragraph"),
                    "preceding paragraph is empty",
                ));
            }
            if item.target_tokens == 0 {
                issues.push(ValidationIssue::error(
                    format!("{loc}/target_tokens"),
                    "target_tokens must be > 0",
                ));
            }
            if item.themes.is_empty() {
                if d.default_themes.is_empty() {
                    issues.push(ValidationIssue::error(
                        format!("{loc}/themes"),
                        "no themes and no dataset default_themes to substitute",
                    ));
                } else {
                    issues.push(ValidationIssue::warning(
                        format!("{loc}/themes"),
                        "no themes; dataset default_themes will be used",
                    ));
                }
            }
            for (i, theme) in item.themes.iter().enumerate() {
                if theme.trim().is_empty() {
                    issues.push(ValidationIssue::error(format!("{loc}/themes[{i}]"), "theme is empty"));
                }
            }
            if item.raw_qa_refs.is_empty() {
                issues.push(ValidationIssue::error(
                    format!("{loc}/raw_qa_refs"),
                    "raw_qa_refs is empty",
                ));
            }
            for qid in &item.raw_qa_refs {
                if !question_ids.contains(qid.as_str()) {
                    issues.push(ValidationIssue {
                        severity: Severity::Error,
                        location: format!("{loc}/raw_qa_refs"),
                        message: format!("unknown question `{qid}`"),
                        kind: IssueKind::DanglingReference {
                            item_id: item.item_id,
                            question_id: qid.clone(),
                        },
                    });
                }
            }
        }
    }
    issues
}

fn duplicate(what: &str, id: &str, location: String) -> ValidationIssue {
    ValidationIssue {
        severity: Severity::Error,
        location,
        message: format!("duplicate {what} id `{id}`"),
        kind: IssueKind::DuplicateId {
            what: what.to_string(),
            id: id.to_string(),
        },
    }
}
