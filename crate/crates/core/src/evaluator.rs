//! The per-item evaluation protocol: build the analysis prompt, generate
//! `iterations` outputs, embed them together with the reference passage and
//! score each output by cosine similarity.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{validate_dataset, BenchmarkItem, Dataset, PaperRecord, ValidationIssue};
use crate::gateway::{CompletionOptions, EmbeddingBackendConfig, Gateway, GatewayError, GenerationRun, ModelConfig};
use crate::prompt::{format_raw_data, AnalysisRequest, PromptEngine, PromptError};
use crate::reporter::{EvaluationReport, ItemError, PaperGroup};
use crate::similarity::{cosine, iteration_stats, ScoreStats, SimilarityError};

pub const DEFAULT_ITERATIONS: u32 = 5;
pub const DEFAULT_FLAG_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub model: ModelConfig,
    pub embedding_backend: EmbeddingBackendConfig,
    pub iterations: u32,
    pub flag_threshold: f64,
    /// Send prompts even when they overflow the model's context window.
    #[serde(default)]
    pub allow_budget_overflow: bool,
    /// Run the question generator over each item's first generation.
    #[serde(default)]
    pub verify_with_questions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            model: ModelConfig::default(),
            embedding_backend: EmbeddingBackendConfig::default(),
            iterations: DEFAULT_ITERATIONS,
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
            allow_budget_overflow: false,
            verify_with_questions: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.iterations < 2 {
            return Err(EvalError::InvalidConfig(format!(
                "iterations must be at least 2, got {}",
                self.iterations
            )));
        }
        if !(0.0..=1.0).contains(&self.flag_threshold) {
            return Err(EvalError::InvalidConfig(format!(
                "flag threshold {} is outside [0, 1]",
                self.flag_threshold
            )));
        }
        self.model
            .validate()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))
    }

    pub fn is_flagged(&self, mean: f64) -> bool {
        mean < self.flag_threshold
    }
}

/// Where a generation is persisted, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRef {
    pub iteration: u32,
    pub prompt_hash: String,
    pub path: String,
}

impl GenerationRef {
    pub fn relative_path(item_id: u32, iteration: u32) -> String {
        format!("generations/item-{item_id:04}-iter-{iteration:02}.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: u32,
    pub paper_id: String,
    pub stats: ScoreStats,
    pub flagged: bool,
    pub generations: Vec<GenerationRef>,
}

/// Output of the question generator for one item. Evidence only; it never
/// feeds into scores.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub item_id: u32,
    pub answers: Vec<String>,
    pub questions: Vec<String>,
    pub relevant_raw_data: Vec<String>,
    pub raw_response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemOutcome {
    pub score: ItemScore,
    pub runs: Vec<GenerationRun>,
    pub questions: Option<QuestionSet>,
}

/// Everything a dataset evaluation produced.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEvaluation {
    pub report: EvaluationReport,
    pub runs: Vec<GenerationRun>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("item {item_id}: {source}")]
    Gateway {
        item_id: u32,
        #[source]
        source: GatewayError,
    },
    #[error("item {item_id}: {source}")]
    Prompt {
        item_id: u32,
        #[source]
        source: PromptError,
    },
    #[error("item {item_id}: {source}")]
    Similarity {
        item_id: u32,
        #[source]
        source: SimilarityError,
    },
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset has {} validation error(s)", .0.len())]
    InvalidDataset(Vec<ValidationIssue>),
    #[error("selection contains no items")]
    EmptySelection,
    #[error("generated text is empty")]
    EmptyGenerated,
    #[error("run aborted: {0}")]
    AbortAll(String),
}

impl EvalError {
    fn is_auth(&self) -> bool {
        matches!(
            self,
            EvalError::Gateway {
                source: GatewayError::AuthMissing(_),
                ..
            }
        )
    }
}

pub struct Evaluator<'a> {
    gateway: &'a Gateway,
    prompts: &'a PromptEngine,
    default_themes: Vec<String>,
}

impl<'a> Evaluator<'a> {
    pub fn new(gateway: &'a Gateway, prompts: &'a PromptEngine) -> Self {
        Self {
            gateway,
            prompts,
            default_themes: Vec::new(),
        }
    }

    /// Themes used for items that list none.
    pub fn with_default_themes(mut self, themes: Vec<String>) -> Self {
        self.default_themes = themes;
        self
    }

    pub fn analysis_request(&self, item: &BenchmarkItem, paper: &PaperRecord) -> Result<AnalysisRequest, EvalError> {
        let prompt_err = |source| EvalError::Prompt {
            item_id: item.item_id,
            source,
        };
        let raw = format_raw_data(&paper.referenced_qa(item)).map_err(prompt_err)?;
        let themes = if item.themes.is_empty() {
            self.default_themes.clone()
        } else {
            item.themes.clone()
        };
        Ok(AnalysisRequest {
            paper_summary: paper.summary.clone(),
            raw_data_block: raw,
            preceding_paragraph: item.preceding_paragraph.clone(),
            themes,
            target_tokens: item.target_tokens,
        })
    }

    pub fn evaluate_item(
        &self,
        item: &BenchmarkItem,
        paper: &PaperRecord,
        cfg: &RunConfig,
    ) -> Result<ItemOutcome, EvalError> {
        cfg.validate()?;
        let item_id = item.item_id;
        let gw_err = |source| EvalError::Gateway { item_id, source };

        let req = self.analysis_request(item, paper)?;
        let prompt = self
            .prompts
            .build_analysis_prompt_for(Some(&cfg.model.model_name), &req)
            .map_err(|source| EvalError::Prompt { item_id, source })?;

        let mut runs = Vec::with_capacity(cfg.iterations as usize);
        for iteration in 1..=cfg.iterations {
            let opts = CompletionOptions {
                item_id,
                iteration,
                seed_hint: None,
                allow_overflow: cfg.allow_budget_overflow,
            };
            runs.push(self.gateway.complete(&prompt, &cfg.model, opts).map_err(gw_err)?);
        }

        let mut texts = Vec::with_capacity(runs.len() + 1);
        texts.push(item.reference_passage.clone());
        texts.extend(runs.iter().map(|r| r.output_text.clone()));
        let vectors = self.gateway.embed(&texts).map_err(gw_err)?;
        let (reference, generated) = vectors.split_first().expect("reference vector present");

        let scores = generated
            .iter()
            .map(|g| cosine(g, reference))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|source| EvalError::Similarity { item_id, source })?;
        let stats = iteration_stats(&scores).map_err(|source| EvalError::Similarity { item_id, source })?;

        let questions = if cfg.verify_with_questions {
            Some(self.verify_with_questions(item, &runs[0].output_text, cfg)?)
        } else {
            None
        };

        Ok(ItemOutcome {
            score: ItemScore {
                item_id,
                paper_id: paper.paper_id.clone(),
                flagged: cfg.is_flagged(stats.mean),
                stats,
                generations: runs
                    .iter()
                    .map(|r| GenerationRef {
                        iteration: r.iteration,
                        prompt_hash: r.prompt_hash.clone(),
                        path: GenerationRef::relative_path(item_id, r.iteration),
                    })
                    .collect(),
            },
            runs,
            questions,
        })
    }

    /// Evaluates every item. Items run concurrently up to the gateway's
    /// parallelism; results are assembled in item id order. A failing item
    /// is recorded in the report and does not stop the others, except for
    /// missing credentials, which abort the whole run.
    pub fn evaluate_dataset(&self, d: &Dataset, cfg: &RunConfig) -> Result<DatasetEvaluation, EvalError> {
        cfg.validate()?;
        if d.item_count() == 0 {
            return Err(EvalError::EmptySelection);
        }
        let errors: Vec<ValidationIssue> = validate_dataset(d).into_iter().filter(|i| i.is_error()).collect();
        if !errors.is_empty() {
            return Err(EvalError::InvalidDataset(errors));
        }

        let evaluator = Evaluator {
            gateway: self.gateway,
            prompts: self.prompts,
            default_themes: if self.default_themes.is_empty() {
                d.default_themes.clone()
            } else {
                self.default_themes.clone()
            },
        };
        let items = d.items();
        let results: Vec<Mutex<Option<Result<ItemOutcome, EvalError>>>> =
            items.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let workers = self.gateway.config().parallelism.clamp(1, items.len());

        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((paper, item)) = items.get(i) else { break };
                    let result = evaluator.evaluate_item(item, paper, cfg);
                    if let Err(e) = &result {
                        log::warn!("{e}");
                        if e.is_auth() {
                            abort.store(true, Ordering::SeqCst);
                        }
                    }
                    *results[i].lock().unwrap() = Some(result);
                });
            }
        });

        let mut scores = Vec::new();
        let mut item_errors = Vec::new();
        let mut question_sets = Vec::new();
        let mut runs = Vec::new();
        for ((paper, item), slot) in items.iter().zip(results) {
            match slot.into_inner().unwrap() {
                Some(Ok(outcome)) => {
                    scores.push(outcome.score);
                    question_sets.extend(outcome.questions);
                    runs.extend(outcome.runs);
                }
                Some(Err(e)) if e.is_auth() => return Err(EvalError::AbortAll(e.to_string())),
                Some(Err(e)) => item_errors.push(ItemError {
                    item_id: item.item_id,
                    paper_id: paper.paper_id.clone(),
                    message: e.to_string(),
                }),
                // skipped after an abort
                None => {}
            }
        }
        Ok(DatasetEvaluation {
            report: EvaluationReport::assemble(
                cfg.clone(),
                PaperGroup::from_dataset(d),
                scores,
                item_errors,
                question_sets,
            ),
            runs,
        })
    }

    /// Turns the generated analysis into answers (one per sentence) and asks
    /// the question generator for matching questions and the raw data needed
    /// to answer them.
    pub fn verify_with_questions(
        &self,
        item: &BenchmarkItem,
        generated: &str,
        cfg: &RunConfig,
    ) -> Result<QuestionSet, EvalError> {
        let item_id = item.item_id;
        if generated.trim().is_empty() {
            return Err(EvalError::EmptyGenerated);
        }
        let answers = split_sentences(generated);
        let prompt = self
            .prompts
            .build_question_prompt(&answers)
            .map_err(|source| EvalError::Prompt { item_id, source })?;
        let opts = CompletionOptions {
            item_id,
            iteration: 1,
            seed_hint: None,
            allow_overflow: cfg.allow_budget_overflow,
        };
        let run = self
            .gateway
            .complete(&prompt, &cfg.model, opts)
            .map_err(|source| EvalError::Gateway { item_id, source })?;
        let (questions, relevant_raw_data) = parse_question_response(&run.output_text);
        Ok(QuestionSet {
            item_id,
            answers,
            questions,
            relevant_raw_data,
            raw_response: run.output_text,
        })
    }
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let end = i + c.len_utf8();
            if chars.peek().is_none_or(|(_, n)| n.is_whitespace()) {
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn numbered_field<'a>(line: &'a str, tag: &str) -> Option<&'a str> {
    let rest = line.strip_prefix(tag)?;
    let digits = rest.len() - rest.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return None;
    }
    rest[digits..].strip_prefix(':').map(str::trim)
}

/// Reads `Qn:` and `DATAn:` lines. When the model ignored the format, every
/// non-empty line counts as a question.
pub fn parse_question_response(text: &str) -> (Vec<String>, Vec<String>) {
    let mut questions = Vec::new();
    let mut data = Vec::new();
    for line in text.lines().map(str::trim) {
        if let Some(q) = numbered_field(line, "Q") {
            questions.push(q.to_string());
        } else if let Some(d) = numbered_field(line, "DATA") {
            data.push(d.to_string());
        }
    }
    if questions.is_empty() {
        questions = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
    }
    (questions, data)
}
