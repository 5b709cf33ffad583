use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Token counting strategy. Deployments with access to the model's real
/// tokenizer can plug it in here; everything else uses [`CharHeuristic`].
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str, model: &ModelConfig) -> usize;
}

/// `ceil(chars / 4)` over Unicode scalar values. An estimate, not an exact
/// count: it tends to over-count ordinary English prose, which makes it a
/// conservative bound for budget checks.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharHeuristic;

impl TokenCounter for CharHeuristic {
    fn count(&self, text: &str, _model: &ModelConfig) -> usize {
        text.chars().count().div_ceil(4)
    }
}

/// Counts tokens with the default heuristic.
pub fn count_tokens(text: &str, model: &ModelConfig) -> usize {
    CharHeuristic.count(text, model)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub prompt_tokens: u64,
    pub max_output_tokens: u64,
    pub context_window: u64,
    /// `context_window - prompt_tokens - max_output_tokens`; negative when
    /// the request overflows.
    pub margin: i64,
}

impl BudgetReport {
    pub fn new(prompt_tokens: usize, model: &ModelConfig) -> Self {
        let prompt_tokens = prompt_tokens as u64;
        let max_output_tokens = u64::from(model.max_output_tokens);
        let context_window = u64::from(model.context_window);
        Self {
            prompt_tokens,
            max_output_tokens,
            context_window,
            margin: context_window as i64 - prompt_tokens as i64 - max_output_tokens as i64,
        }
    }

    pub fn fits(&self) -> bool {
        self.margin >= 0
    }

    pub fn overflow(&self) -> u64 {
        if self.margin < 0 {
            self.margin.unsigned_abs()
        } else {
            0
        }
    }
}
