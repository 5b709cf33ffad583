//! Blocking client for OpenAI-compatible `chat/completions` and `embeddings`
//! endpoints. Works against hosted GPT-class APIs and self-hosted Llama-class
//! servers that speak the same protocol.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::provider::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, ProviderFailure};
use super::GatewayError;

pub const API_KEY_ENV: &str = "QUALBENCH_API_KEY";

const REQUEST_TIMEOUT: Duration = Duration::from_secs(300);

/// Reads the API key from `QUALBENCH_API_KEY`.
pub fn api_key_from_env() -> Result<String, GatewayError> {
    match std::env::var(API_KEY_ENV) {
        Ok(key) if !key.trim().is_empty() => Ok(key),
        _ => Err(GatewayError::AuthMissing(format!(
            "environment variable {API_KEY_ENV} is not set"
        ))),
    }
}

#[derive(Clone)]
struct HttpClient {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpClient {
    fn new(base_url: &str, api_key: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(REQUEST_TIMEOUT))
            .build()
            .into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    fn post(&self, path: &str, body: Value) -> Result<Value, ProviderFailure> {
        let url = format!("{}/{path}", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| ProviderFailure::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderFailure::Transport(e.to_string()))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| ProviderFailure::Malformed(e.to_string())),
            401 | 403 => Err(ProviderFailure::Unauthorized(format!("HTTP {status}: {text}"))),
            code => Err(ProviderFailure::Status { code, body: text }),
        }
    }
}

pub struct OpenAiChat {
    http: HttpClient,
}

impl OpenAiChat {
    pub fn new(base_url: &str, api_key: impl Into<String>) -> Self {
        Self {
            http: HttpClient::new(base_url, api_key.into()),
        }
    }

    pub fn from_env(base_url: &str) -> Result<Self, GatewayError> {
        Ok(Self::new(base_url, api_key_from_env()?))
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    model: Option<String>,
    choices: Vec<Choice>,
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: Option<u32>,
    completion_tokens: Option<u32>,
}

impl ChatProvider for OpenAiChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        let mut body = json!({
            "model": req.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let value = self.http.post("chat/completions", body)?;
        let parsed: ChatCompletion =
            serde_json::from_value(value).map_err(|e| ProviderFailure::Malformed(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderFailure::Malformed("no message content in choices".into()))?;
        Ok(ChatResponse {
            text,
            prompt_tokens: parsed.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: parsed.usage.as_ref().and_then(|u| u.completion_tokens),
            model: parsed.model,
        })
    }
}

pub struct OpenAiEmbedder {
    http: HttpClient,
    model: String,
}

impl OpenAiEmbedder {
    pub fn new(base_url: &str, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            http: HttpClient::new(base_url, api_key.into()),
            model: model.into(),
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingList {
    data: Vec<EmbeddingEntry>,
}

#[derive(Deserialize)]
struct EmbeddingEntry {
    index: usize,
    embedding: Vec<f64>,
}

impl EmbeddingProvider for OpenAiEmbedder {
    fn id(&self) -> String {
        format!("openai:{}:{}", self.http.base_url, self.model)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        let value = self
            .http
            .post("embeddings", json!({"model": self.model, "input": texts}))?;
        let mut parsed: EmbeddingList =
            serde_json::from_value(value).map_err(|e| ProviderFailure::Malformed(e.to_string()))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderFailure::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|e| e.index);
        Ok(parsed.data.into_iter().map(|e| e.embedding).collect())
    }
}
