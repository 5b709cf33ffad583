//! Batch harness for LLM-driven qualitative analysis of open-ended
//! questionnaire data, scored against reference findings passages by
//! sentence-embedding cosine similarity.
//!
//! Pipeline: [`dataset`] → [`prompt`] → [`gateway`] (generation and
//! embedding) → [`similarity`] → [`evaluator`] → [`reporter`], with [`run`]
//! tying a dataset evaluation to an on-disk run directory.

pub mod dataset;
pub mod evaluator;
pub mod gateway;
pub mod prompt;
pub mod reporter;
pub mod run;
pub mod similarity;

pub use dataset::{
    load_dataset, read_dataset, save_dataset, validate_dataset, BenchmarkItem, Dataset, DatasetError, PaperRecord,
    RawQaPair, Severity, ValidationIssue,
};
pub use evaluator::{DatasetEvaluation, EvalError, Evaluator, ItemOutcome, ItemScore, QuestionSet, RunConfig};
pub use gateway::{
    count_tokens, BudgetReport, CompletionOptions, EmbeddingBackendConfig, Gateway, GatewayConfig, GatewayError,
    GenerationRun, ModelConfig,
};
pub use prompt::{format_raw_data, AnalysisRequest, PromptEngine, PromptError, PromptKind, PromptString};
pub use reporter::{emit_summary, emit_table, emit_violin_data, EvaluationReport, ReportError, TableFormat};
pub use run::{execute_run, RunError, RunLayout};
pub use similarity::{cosine, iteration_stats, ScoreStats, SimilarityError};
