//! Deterministic offline providers.
//!
//! The mock embedder uses signed feature hashing so that texts sharing words
//! get similar vectors:
//!
//! 1. Split the text into maximal runs of alphanumeric characters and
//!    lowercase each run.
//! 2. For every token, take `d = SHA-256(token)`. Add `+1` (if `d[4]` is even)
//!    or `-1` (if odd) to component `u32::from_le_bytes(d[0..4]) % dim`.
//! 3. If the result is the zero vector, instead set component `i` to
//!    `t[i % 32] - 127.5` where `t = SHA-256(text)`.
//! 4. Divide by the L2 norm.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::provider::{ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, ProviderFailure};

pub const DEFAULT_MOCK_DIM: usize = 256;

pub fn hash_embedding(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut v = vec![0.0; dim];
    let tokens = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase);
    for token in tokens {
        let d = Sha256::digest(token.as_bytes());
        let idx = u32::from_le_bytes([d[0], d[1], d[2], d[3]]) as usize % dim;
        v[idx] += if d[4] % 2 == 0 { 1.0 } else { -1.0 };
    }
    if v.iter().all(|x| *x == 0.0) {
        let t = Sha256::digest(text.as_bytes());
        for (i, x) in v.iter_mut().enumerate() {
            *x = f64::from(t[i % 32]) - 127.5;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dim: usize,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM)
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn id(&self) -> String {
        format!("mock-hash:{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        Ok(texts.iter().map(|t| hash_embedding(t, self.dim)).collect())
    }
}

/// Answers with a string derived from the prompt hash and iteration.
#[derive(Debug, Clone, Default)]
pub struct EchoChat;

impl EchoChat {
    pub fn response_for(req: &ChatRequest) -> String {
        let hash = hex::encode(Sha256::digest(req.prompt.as_bytes()));
        format!("mock response {} iteration {}", &hash[..16], req.iteration)
    }
}

impl ChatProvider for EchoChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        Ok(ChatResponse::text(Self::response_for(req)))
    }
}

/// Builds a plausible analysis by quoting a few participant answers from the
/// prompt. Which answers are chosen depends on the iteration, so repeated
/// generations differ while staying reproducible.
#[derive(Debug, Clone)]
pub struct ExtractiveChat {
    pub sentences: usize,
}

impl Default for ExtractiveChat {
    fn default() -> Self {
        Self { sentences: 4 }
    }
}

fn answer_line(line: &str) -> Option<&str> {
    let (who, answer) = line.split_once(": ")?;
    (!who.is_empty() && who.len() <= 12 && !who.contains(char::is_whitespace)).then_some(answer.trim())
}

impl ChatProvider for ExtractiveChat {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        let lines: Vec<&str> = req.prompt.lines().map(str::trim).collect();
        let mut candidates: Vec<&str> = lines.iter().filter_map(|l| answer_line(l)).collect();
        if candidates.is_empty() {
            candidates = lines
                .iter()
                .copied()
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .collect();
        }
        if candidates.is_empty() {
            return Ok(ChatResponse::text("No data to analyse."));
        }
        let mut ranked: Vec<(usize, [u8; 32])> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut h = Sha256::new();
                h.update(req.iteration.to_le_bytes());
                h.update(c.as_bytes());
                (i, h.finalize().into())
            })
            .collect();
        ranked.sort_by_key(|r| r.1);
        let mut picked: Vec<usize> = ranked.iter().take(self.sentences.max(1)).map(|(i, _)| *i).collect();
        picked.sort_unstable();
        let text = picked
            .iter()
            .map(|&i| {
                let s = candidates[i].trim_end_matches(['.', '!', '?']);
                format!("Participants reported that {s}.")
            })
            .collect::<Vec<_>>()
            .join(" ");
        Ok(ChatResponse::text(text))
    }
}

/// Wraps a closure as a provider.
pub struct FnChat<F>(pub F);

impl<F> ChatProvider for FnChat<F>
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, ProviderFailure> + Send + Sync,
{
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        (self.0)(req)
    }
}

/// Replays a fixed transcript of results in order, then repeats the
/// fallback forever.
pub struct ScriptedChat {
    script: Mutex<VecDeque<Result<ChatResponse, ProviderFailure>>>,
    fallback: Result<ChatResponse, ProviderFailure>,
}

impl ScriptedChat {
    pub fn new(
        script: impl IntoIterator<Item = Result<ChatResponse, ProviderFailure>>,
        fallback: Result<ChatResponse, ProviderFailure>,
    ) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            fallback,
        }
    }
}

impl ChatProvider for ScriptedChat {
    fn chat(&self, _req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| self.fallback.clone())
    }
}

/// Counts calls reaching the wrapped provider.
pub struct Counting<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P> Counting<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<P: ChatProvider> ChatProvider for Counting<P> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(req)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for Counting<P> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(texts)
    }
}
