use std::fmt;

use serde::{Deserialize, Serialize};

/// One chat-completion call as seen by a provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// 1-based generation index; mock providers use it to vary output.
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: Option<u32>,
    pub completion_tokens: Option<u32>,
    /// Model identifier reported by the provider, if any.
    pub model: Option<String>,
}

impl ChatResponse {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            prompt_tokens: None,
            completion_tokens: None,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderFailure {
    /// Connection, timeout or other transport-level problem.
    Transport(String),
    /// Non-success HTTP status.
    Status { code: u16, body: String },
    /// Credentials missing or rejected.
    Unauthorized(String),
    /// Response received but not understood.
    Malformed(String),
}

impl ProviderFailure {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderFailure::Transport(_) => true,
            ProviderFailure::Status { code, .. } => *code == 429 || *code >= 500,
            ProviderFailure::Unauthorized(_) | ProviderFailure::Malformed(_) => false,
        }
    }
}

impl fmt::Display for ProviderFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProviderFailure::Transport(m) => write!(f, "transport error: {m}"),
            ProviderFailure::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            ProviderFailure::Unauthorized(m) => write!(f, "unauthorized: {m}"),
            ProviderFailure::Malformed(m) => write!(f, "malformed response: {m}"),
        }
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identifier folded into embedding cache keys.
    fn id(&self) -> String;

    /// One vector per input text, in input order. Vectors need not be
    /// normalized; the gateway does that.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure>;
}

impl<T: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        (**self).chat(req)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for std::sync::Arc<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        (**self).embed(texts)
    }
}
