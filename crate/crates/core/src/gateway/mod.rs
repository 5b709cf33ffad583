//! Provider-agnostic access to chat-completion and embedding endpoints.
//!
//! All network I/O of the harness goes through [`Gateway`]. It adds the
//! context-window budget guard, retries with exponential backoff, bounded
//! parallelism and an on-disk response cache on top of any
//! [`ChatProvider`] / [`EmbeddingProvider`].

pub mod cache;
pub mod mock;
pub mod openai;
pub mod provider;
pub mod tokens;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::PromptString;

pub use cache::DiskCache;
pub use provider::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, ProviderFailure};
pub use tokens::{count_tokens, BudgetReport, CharHeuristic, TokenCounter};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error(
        "prompt of {} tokens plus {} output tokens exceeds the {}-token context window by {}",
        .0.prompt_tokens, .0.max_output_tokens, .0.context_window, .0.overflow()
    )]
    BudgetExceeded(BudgetReport),
    #[error("provider failed after {attempts} attempt(s): {failure}")]
    ProviderError { attempts: u32, failure: ProviderFailure },
    #[error("authentication missing: {0}")]
    AuthMissing(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub provider_base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub context_window: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            provider_base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4".into(),
            temperature: DEFAULT_TEMPERATURE,
            max_output_tokens: 1024,
            context_window: 8192,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: String| Err(GatewayError::InvalidConfig(m));
        if self.model_name.trim().is_empty() {
            return bad("model name is empty".into());
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be a finite number >= 0", self.temperature));
        }
        if self.max_output_tokens == 0 || self.context_window == 0 {
            return bad("token limits must be positive".into());
        }
        if self.max_output_tokens >= self.context_window {
            return bad(format!(
                "max_output_tokens {} must be below context_window {}",
                self.max_output_tokens, self.context_window
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingBackendConfig {
    /// Offline feature-hashing embedder, see [`mock`].
    Mock { dim: usize },
    /// OpenAI-compatible `POST {base_url}/embeddings`.
    OpenAi { base_url: String, model: String },
}

impl Default for EmbeddingBackendConfig {
    fn default() -> Self {
        EmbeddingBackendConfig::OpenAi {
            base_url: "https://api.openai.com/v1".into(),
            model: "sentence-transformers/all-MiniLM-L6-v2".into(),
        }
    }
}

impl EmbeddingBackendConfig {
    pub fn build(&self) -> Result<Box<dyn EmbeddingProvider>, GatewayError> {
        Ok(match self {
            EmbeddingBackendConfig::Mock { dim } => {
                if *dim == 0 {
                    return Err(GatewayError::InvalidConfig(
                        "mock embedding dim must be positive".into(),
                    ));
                }
                Box::new(mock::MockEmbedder::new(*dim))
            }
            EmbeddingBackendConfig::OpenAi { base_url, model } => Box::new(openai::OpenAiEmbedder::new(
                base_url,
                model,
                openai::api_key_from_env()?,
            )),
        })
    }
}

/// One model output for one benchmark item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRun {
    pub item_id: u32,
    pub iteration: u32,
    pub model: ModelConfig,
    /// Model identifier reported by the provider, when it returns one.
    pub provider_model: Option<String>,
    pub prompt_hash: String,
    pub output_text: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CompletionOptions {
    pub item_id: u32,
    pub iteration: u32,
    pub seed_hint: Option<u64>,
    /// Send the request even if the budget check reports an overflow.
    pub allow_overflow: bool,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Maximum concurrent provider requests.
    pub parallelism: usize,
    /// Retries after the first failed attempt.
    pub retry_cap: u32,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            parallelism: 4,
            retry_cap: 5,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub chat_calls: usize,
    pub embed_calls: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CachedCompletion {
    text: String,
    prompt_tokens: u32,
    completion_tokens: u32,
    provider_model: Option<String>,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.cv.wait_while(self.free.lock().unwrap(), |n| *n == 0).unwrap();
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

pub struct Gateway {
    chat: Box<dyn ChatProvider>,
    embedder: Box<dyn EmbeddingProvider>,
    counter: Box<dyn TokenCounter>,
    cache: Option<DiskCache>,
    config: GatewayConfig,
    permits: Permits,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
    cache_hits: AtomicUsize,
}

fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Gateway {
    pub fn new(
        chat: impl ChatProvider + 'static,
        embedder: impl EmbeddingProvider + 'static,
        config: GatewayConfig,
    ) -> Self {
        Self::from_boxed(Box::new(chat), Box::new(embedder), config)
    }

    pub fn from_boxed(
        chat: Box<dyn ChatProvider>,
        embedder: Box<dyn EmbeddingProvider>,
        config: GatewayConfig,
    ) -> Self {
        Self {
            chat,
            embedder,
            counter: Box::new(CharHeuristic),
            cache: None,
            permits: Permits::new(config.parallelism),
            config,
            chat_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_token_counter(mut self, counter: impl TokenCounter + 'static) -> Self {
        self.counter = Box::new(counter);
        self
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            chat_calls: self.chat_calls.load(Ordering::SeqCst),
            embed_calls: self.embed_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    pub fn count_tokens(&self, text: &str, model: &ModelConfig) -> usize {
        self.counter.count(text, model)
    }

    pub fn check_budget(&self, prompt: &PromptString, model: &ModelConfig) -> BudgetReport {
        BudgetReport::new(self.count_tokens(prompt.as_str(), model), model)
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, ProviderFailure>) -> Result<T, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.permits.run(&mut call) {
                Ok(v) => return Ok(v),
                Err(ProviderFailure::Unauthorized(m)) => return Err(GatewayError::AuthMissing(m)),
                Err(f) if f.is_retryable() && attempt <= self.config.retry_cap => {
                    let delay = self
                        .config
                        .backoff_base
                        .saturating_mul(1 << (attempt - 1).min(16))
                        .min(self.config.backoff_max);
                    log::debug!("attempt {attempt} failed ({f}); retrying in {delay:?}");
                    thread::sleep(delay);
                }
                Err(failure) => {
                    return Err(GatewayError::ProviderError {
                        attempts: attempt,
                        failure,
                    })
                }
            }
        }
    }

    /// Runs one chat completion. The budget is checked before anything is
    /// sent; results are cached by prompt hash, model name, temperature and
    /// iteration.
    pub fn complete(
        &self,
        prompt: &PromptString,
        model: &ModelConfig,
        opts: CompletionOptions,
    ) -> Result<GenerationRun, GatewayError> {
        model.validate()?;
        let budget = self.check_budget(prompt, model);
        if !budget.fits() && !opts.allow_overflow {
            return Err(GatewayError::BudgetExceeded(budget));
        }
        let prompt_hash = prompt.hash();
        let key = DiskCache::key(&[
            "chat",
            &prompt_hash,
            &model.model_name,
            &format!("{:?}", model.temperature),
            &opts.iteration.to_string(),
        ]);

        let lock = self.cache.as_ref().map(|c| c.lock_for(&key));
        let _guard = lock.as_ref().map(|l| l.lock().unwrap());

        let cached = self.cache.as_ref().and_then(|c| c.get::<CachedCompletion>(&key));
        let entry = match cached {
            Some(entry) => {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                entry
            }
            None => {
                let req = ChatRequest {
                    model: model.model_name.clone(),
                    prompt: prompt.as_str().to_string(),
                    temperature: model.temperature,
                    max_tokens: model.max_output_tokens,
                    seed: opts.seed_hint,
                    iteration: opts.iteration,
                };
                let resp = self.with_retries(|| {
                    self.chat_calls.fetch_add(1, Ordering::SeqCst);
                    self.chat.chat(&req)
                })?;
                let entry = CachedCompletion {
                    prompt_tokens: resp.prompt_tokens.unwrap_or(budget.prompt_tokens as u32),
                    completion_tokens: resp
                        .completion_tokens
                        .unwrap_or_else(|| self.count_tokens(&resp.text, model) as u32),
                    text: resp.text,
                    provider_model: resp.model,
                };
                if let Some(c) = &self.cache {
                    c.put(&key, &entry)?;
                }
                entry
            }
        };

        Ok(GenerationRun {
            item_id: opts.item_id,
            iteration: opts.iteration,
            model: model.clone(),
            provider_model: entry.provider_model,
            prompt_hash,
            output_text: entry.text,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            timestamp: Utc::now(),
        })
    }

    /// Embeds `texts` into L2-normalized vectors, one per text, all of the
    /// same dimension. Only cache misses reach the provider, in one batch.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::EmptyInput(format!("text {i} to embed is empty")));
        }
        let backend = self.embedder.id();
        let keys: Vec<String> = texts
            .iter()
            .map(|t| DiskCache::key(&["embed", &backend, &text_hash(t)]))
            .collect();

        let mut out: Vec<Option<Vec<f64>>> = keys
            .iter()
            .map(|k| self.cache.as_ref().and_then(|c| c.get(k)))
            .collect();
        self.cache_hits
            .fetch_add(out.iter().filter(|v| v.is_some()).count(), Ordering::SeqCst);

        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.with_retries(|| {
                self.embed_calls.fetch_add(1, Ordering::SeqCst);
                self.embedder.embed(&batch)
            })?;
            if vectors.len() != batch.len() {
                return Err(malformed(format!(
                    "expected {} vectors, got {}",
                    batch.len(),
                    vectors.len()
                )));
            }
            for (&i, v) in missing.iter().zip(vectors) {
                let v = normalize(v).ok_or_else(|| malformed(format!("zero or non-finite vector for text {i}")))?;
                if let Some(c) = &self.cache {
                    let lock = c.lock_for(&keys[i]);
                    let _g = lock.lock().unwrap();
                    c.put(&keys[i], &v)?;
                }
                out[i] = Some(v);
            }
        }

        let out: Vec<Vec<f64>> = out.into_iter().map(|v| v.expect("filled")).collect();
        if let Some(first) = out.first() {
            if out.iter().any(|v| v.len() != first.len()) {
                return Err(malformed("embeddings have inconsistent dimensions".into()));
            }
        }
        Ok(out)
    }
}

fn malformed(msg: String) -> GatewayError {
    GatewayError::ProviderError {
        attempts: 1,
        failure: ProviderFailure::Malformed(msg),
    }
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}
