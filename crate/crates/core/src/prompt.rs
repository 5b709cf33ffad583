//! The three prompts of the analysis pipeline: qualitative analysis, paper
//! summary and question generation.
//!
//! Templates are plain text assets with `{{slot}}` markers. The defaults are
//! compiled in from `prompts/*.txt`; [`PromptEngine::from_dir`] loads a
//! replacement set, optionally with per-model overrides in
//! `<dir>/<model_name>/<template>.txt`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::RawQaPair;

const DEFAULT_ANALYSIS: &str = include_str!("../prompts/analysis.txt");
const DEFAULT_SUMMARY: &str = include_str!("../prompts/summary.txt");
const DEFAULT_QUESTION: &str = include_str!("../prompts/question.txt");

/// Rendered in place of an empty preceding paragraph.
pub const NO_PRECEDING_PARAGRAPH: &str = "(none: this passage opens the findings section)";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("required slot `{0}` is empty")]
    MissingSlot(&'static str),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid value for `{slot}`: {reason}")]
    InvalidValue { slot: &'static str, reason: String },
    #[error("{kind} template does not contain required slot `{{{{{slot}}}}}`")]
    TemplateMissingSlot { kind: PromptKind, slot: String },
    #[error("{kind} template uses unknown slot `{{{{{slot}}}}}`")]
    UnknownSlot { kind: PromptKind, slot: String },
    #[error("{kind} template has an unterminated slot marker at byte {offset}")]
    Unterminated { kind: PromptKind, offset: usize },
    #[error("reading template {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Analysis,
    PaperSummary,
    QuestionGenerator,
}

impl PromptKind {
    pub const ALL: [PromptKind; 3] = [
        PromptKind::Analysis,
        PromptKind::PaperSummary,
        PromptKind::QuestionGenerator,
    ];

    pub fn required_slots(self) -> &'static [&'static str] {
        match self {
            PromptKind::Analysis => &["summary", "raw_data", "preceding_paragraph", "themes", "target_tokens"],
            PromptKind::PaperSummary => &["paper_text"],
            PromptKind::QuestionGenerator => &["answers"],
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::Analysis => "analysis.txt",
            PromptKind::PaperSummary => "summary.txt",
            PromptKind::QuestionGenerator => "question.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::Analysis => DEFAULT_ANALYSIS,
            PromptKind::PaperSummary => DEFAULT_SUMMARY,
            PromptKind::QuestionGenerator => DEFAULT_QUESTION,
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Analysis => "analysis",
            PromptKind::PaperSummary => "paper_summary",
            PromptKind::QuestionGenerator => "question_generator",
        })
    }
}

/// A fully rendered prompt, exactly as sent to the model.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptString(String);

impl PromptString {
    pub fn new(text: impl Into<String>) -> Self {
        Self(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// Hex SHA-256 of the prompt bytes.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.0.as_bytes()))
    }
}

impl fmt::Display for PromptString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: PromptKind,
    text: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    /// Parses `text`, rejecting templates that omit a required slot or name a
    /// slot the prompt kind does not define.
    pub fn new(kind: PromptKind, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        let segments = parse_segments(kind, &text)?;
        let required = kind.required_slots();
        for seg in &segments {
            if let Segment::Slot(name) = seg {
                if !required.contains(&name.as_str()) {
                    return Err(PromptError::UnknownSlot {
                        kind,
                        slot: name.clone(),
                    });
                }
            }
        }
        for slot in required {
            if !segments.iter().any(|s| matches!(s, Segment::Slot(n) if n == slot)) {
                return Err(PromptError::TemplateMissingSlot {
                    kind,
                    slot: slot.to_string(),
                });
            }
        }
        Ok(Self { kind, text, segments })
    }

    pub fn builtin(kind: PromptKind) -> Self {
        Self::new(kind, kind.builtin()).expect("bundled templates are valid")
    }

    pub fn kind(&self) -> PromptKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn required_slots(&self) -> &'static [&'static str] {
        self.kind.required_slots()
    }

    /// Substitutes every slot in one pass. Bound values are inserted
    /// verbatim and never rescanned for markers.
    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<PromptString, PromptError> {
        let mut out = String::with_capacity(self.text.len() + bindings.values().map(String::len).sum::<usize>());
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(name) => {
                    let slot = self
                        .required_slots()
                        .iter()
                        .find(|s| **s == name)
                        .copied()
                        .expect("slots checked at construction");
                    out.push_str(bindings.get(slot).ok_or(PromptError::MissingSlot(slot))?);
                }
            }
        }
        Ok(PromptString(out))
    }
}

fn parse_segments(kind: PromptKind, text: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut rest = text;
    let mut offset = 0;
    while let Some(start) = rest.find("{{") {
        if start > 0 {
            segments.push(Segment::Text(rest[..start].to_string()));
        }
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or(PromptError::Unterminated {
            kind,
            offset: offset + start,
        })?;
        segments.push(Segment::Slot(after[..end].trim().to_string()));
        let consumed = start + 2 + end + 2;
        offset += consumed;
        rest = &rest[consumed..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Text(rest.to_string()));
    }
    Ok(segments)
}

/// Inputs of the single comprehensive analysis prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub paper_summary: String,
    /// Output of [`format_raw_data`].
    pub raw_data_block: String,
    pub preceding_paragraph: String,
    pub themes: Vec<String>,
    pub target_tokens: u32,
}

fn one_line(text: &str) -> String {
    text.split(['\r', '\n'])
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Canonical text rendering of questionnaire data. Each pair becomes a
/// `[question_id] question` line followed by one `participant: answer` line
/// per response, in input order; pairs are separated by a blank line. Line
/// breaks inside answers are folded to spaces.
pub fn format_raw_data(pairs: &[&RawQaPair]) -> Result<String, PromptError> {
    if pairs.is_empty() {
        return Err(PromptError::EmptyInput("no questionnaire data"));
    }
    let blocks: Vec<String> = pairs
        .iter()
        .map(|qa| {
            let mut lines = vec![format!("[{}] {}", qa.question_id, one_line(&qa.question_text))];
            lines.extend(
                qa.responses
                    .iter()
                    .map(|r| format!("{}: {}", r.participant_id, one_line(&r.answer_text))),
            );
            lines.join("\n")
        })
        .collect();
    Ok(blocks.join("\n\n"))
}

/// Builds prompts from the default template set, or from a per-model
/// override when one is registered for the requested model name.
#[derive(Debug, Clone)]
pub struct PromptEngine {
    defaults: BTreeMap<PromptKind, PromptTemplate>,
    overrides: BTreeMap<String, BTreeMap<PromptKind, PromptTemplate>>,
}

impl Default for PromptEngine {
    fn default() -> Self {
        Self {
            defaults: PromptKind::ALL
                .iter()
                .map(|&k| (k, PromptTemplate::builtin(k)))
                .collect(),
            overrides: BTreeMap::new(),
        }
    }
}

impl PromptEngine {
    /// Loads templates from `dir`. Missing files fall back to the bundled
    /// defaults. Each subdirectory is treated as a model name holding
    /// overrides for that model.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut engine = Self::default();
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| PromptError::Io { path, source }
        };
        for kind in PromptKind::ALL {
            if let Some(t) = read_template(&dir.join(kind.file_name()), kind)? {
                engine.defaults.insert(kind, t);
            }
        }
        for entry in fs::read_dir(dir).map_err(io_err(dir))? {
            let entry = entry.map_err(io_err(dir))?;
            if !entry.path().is_dir() {
                continue;
            }
            let model = entry.file_name().to_string_lossy().into_owned();
            for kind in PromptKind::ALL {
                if let Some(t) = read_template(&entry.path().join(kind.file_name()), kind)? {
                    engine = engine.with_override(&model, t);
                }
            }
        }
        Ok(engine)
    }

    pub fn with_override(mut self, model_name: &str, template: PromptTemplate) -> Self {
        self.overrides
            .entry(model_name.to_string())
            .or_default()
            .insert(template.kind(), template);
        self
    }

    pub fn template(&self, kind: PromptKind, model_name: Option<&str>) -> &PromptTemplate {
        model_name
            .and_then(|m| self.overrides.get(m))
            .and_then(|o| o.get(&kind))
            .unwrap_or(&self.defaults[&kind])
    }

    pub fn build_analysis_prompt(&self, req: &AnalysisRequest) -> Result<PromptString, PromptError> {
        self.build_analysis_prompt_for(None, req)
    }

    pub fn build_analysis_prompt_for(
        &self,
        model_name: Option<&str>,
        req: &AnalysisRequest,
    ) -> Result<PromptString, PromptError> {
        if req.paper_summary.trim().is_empty() {
            return Err(PromptError::MissingSlot("summary"));
        }
        if req.raw_data_block.trim().is_empty() {
            return Err(PromptError::MissingSlot("raw_data"));
        }
        if req.themes.iter().all(|t| t.trim().is_empty()) {
            return Err(PromptError::MissingSlot("themes"));
        }
        if req.target_tokens == 0 {
            return Err(PromptError::InvalidValue {
                slot: "target_tokens",
                reason: "must be positive".into(),
            });
        }
        let preceding = if req.preceding_paragraph.trim().is_empty() {
            NO_PRECEDING_PARAGRAPH.to_string()
        } else {
            req.preceding_paragraph.clone()
        };
        let themes = req
            .themes
            .iter()
            .filter(|t| !t.trim().is_empty())
            .map(|t| format!("- {t}"))
            .collect::<Vec<_>>()
            .join("\n");
        let bindings = BTreeMap::from([
            ("summary", req.paper_summary.clone()),
            ("raw_data", req.raw_data_block.clone()),
            ("preceding_paragraph", preceding),
            ("themes", themes),
            ("target_tokens", req.target_tokens.to_string()),
        ]);
        self.template(PromptKind::Analysis, model_name).render(&bindings)
    }

    pub fn build_summary_prompt(&self, full_paper_text: &str) -> Result<PromptString, PromptError> {
        if full_paper_text.trim().is_empty() {
            return Err(PromptError::MissingSlot("paper_text"));
        }
        let bindings = BTreeMap::from([("paper_text", full_paper_text.to_string())]);
        self.template(PromptKind::PaperSummary, None).render(&bindings)
    }

    pub fn build_question_prompt<S: AsRef<str>>(&self, answers: &[S]) -> Result<PromptString, PromptError> {
        if answers.is_empty() {
            return Err(PromptError::EmptyInput("no answers to generate questions for"));
        }
        let numbered = answers
            .iter()
            .enumerate()
            .map(|(i, a)| format!("{}. {}", i + 1, one_line(a.as_ref())))
            .collect::<Vec<_>>()
            .join("\n");
        let bindings = BTreeMap::from([("answers", numbered)]);
        self.template(PromptKind::QuestionGenerator, None).render(&bindings)
    }
}

fn read_template(path: &Path, kind: PromptKind) -> Result<Option<PromptTemplate>, PromptError> {
    match fs::read_to_string(path) {
        Ok(text) => PromptTemplate::new(kind, text).map(Some),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(PromptError::Io {
            path: path.to_path_buf(),
            source,
        }),
    }
}
