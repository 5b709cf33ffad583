#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use qualbench_core::dataset::Response;
use qualbench_core::gateway::mock::{EchoChat, FnChat, MockEmbedder};
use qualbench_core::gateway::{
    ChatProvider, ChatRequest, ChatResponse, EmbeddingProvider, GatewayConfig, ProviderFailure,
};
use qualbench_core::{
    format_raw_data, load_dataset, AnalysisRequest, Dataset, EmbeddingBackendConfig, Evaluator, Gateway, ModelConfig,
    PromptEngine, RawQaPair, RunConfig,
};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/dataset")
}

pub fn fixture() -> Dataset {
    load_dataset(&fixture_dir()).expect("fixture loads")
}

pub fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn fast_gateway_config() -> GatewayConfig {
    GatewayConfig {
        parallelism: 4,
        retry_cap: 5,
        backoff_base: Duration::from_millis(1),
        backoff_max: Duration::from_millis(8),
    }
}

pub fn mock_run_config(run_id: &str) -> RunConfig {
    RunConfig {
        run_id: run_id.into(),
        model: ModelConfig {
            provider_base_url: "mock://".into(),
            model_name: "mock-extractive".into(),
            ..ModelConfig::default()
        },
        embedding_backend: EmbeddingBackendConfig::Mock { dim: 256 },
        ..RunConfig::default()
    }
}

/// Compares `actual` with `tests/golden/<name>`. With `UPDATE_GOLDEN=1` the
/// file is rewritten instead.
pub fn assert_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    assert!(
        expected == actual,
        "golden mismatch for {name}\n--- expected\n{expected}\n--- actual\n{actual}"
    );
}

/// Minimal HTTP/1.1 server answering from a fixed script of
/// `(status, body)` pairs, then the fallback forever.
pub struct ScriptedServer {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<(String, String)>>>,
}

impl ScriptedServer {
    pub fn start(script: Vec<(u16, String)>, fallback: (u16, String)) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let (h, r) = (hits.clone(), requests.clone());
        thread::spawn(move || {
            let mut script = script.into_iter();
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut request_line = String::new();
                reader.read_line(&mut request_line).unwrap();
                let mut content_length = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = line.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            content_length = v.trim().parse().unwrap();
                        }
                    }
                }
                let mut body = vec![0; content_length];
                reader.read_exact(&mut body).unwrap();
                h.fetch_add(1, Ordering::SeqCst);
                let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
                r.lock()
                    .unwrap()
                    .push((path, String::from_utf8_lossy(&body).into_owned()));
                let (code, reply) = script.next().unwrap_or_else(|| fallback.clone());
                let resp = format!(
                    "HTTP/1.1 {code} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        Self {
            base_url,
            hits,
            requests,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<(String, String)> {
        self.requests.lock().unwrap().clone()
    }
}

pub fn chat_body(text: &str) -> String {
    serde_json::json!({
        "model": "served-model-0613",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 42, "completion_tokens": 7}
    })
    .to_string()
}

/// Maps each item's rendered analysis prompt to its item id, so mock
/// providers can answer per item.
pub fn prompt_index(d: &Dataset, model: &str) -> HashMap<String, u32> {
    let prompts = PromptEngine::default();
    let gateway = Gateway::new(EchoChat, MockEmbedder::default(), fast_gateway_config());
    let evaluator = Evaluator::new(&gateway, &prompts).with_default_themes(d.default_themes.clone());
    d.items()
        .into_iter()
        .map(|(paper, item)| {
            let req = evaluator.analysis_request(item, paper).unwrap();
            let prompt = prompts.build_analysis_prompt_for(Some(model), &req).unwrap();
            (prompt.as_str().to_string(), item.item_id)
        })
        .collect()
}

/// Chat provider that answers every analysis prompt with the item's
/// reference passage.
pub fn verbatim_chat(d: &Dataset, model: &str) -> impl ChatProvider {
    let index = prompt_index(d, model);
    let references: HashMap<u32, String> = d
        .items()
        .into_iter()
        .map(|(_, i)| (i.item_id, i.reference_passage.clone()))
        .collect();
    FnChat(move |req: &ChatRequest| {
        let id = index
            .get(req.prompt.as_str())
            .ok_or_else(|| ProviderFailure::Malformed("unknown prompt".into()))?;
        Ok(ChatResponse::text(references[id].clone()))
    })
}

/// Chat provider replying `score:<x>` where `x` is the cosine the
/// [`AngleEmbedder`] will produce against any reference passage.
pub fn score_chat(d: &Dataset, model: &str, score: impl Fn(u32, u32) -> f64 + Send + Sync) -> impl ChatProvider {
    let index = prompt_index(d, model);
    FnChat(move |req: &ChatRequest| {
        let id = index
            .get(req.prompt.as_str())
            .ok_or_else(|| ProviderFailure::Malformed("unknown prompt".into()))?;
        Ok(ChatResponse::text(format!("score:{:?}", score(*id, req.iteration))))
    })
}

/// Embeds `score:<x>` as `[x, sqrt(1 - x^2)]` and anything else as `[1, 0]`.
pub struct AngleEmbedder;

impl EmbeddingProvider for AngleEmbedder {
    fn id(&self) -> String {
        "angle".into()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderFailure> {
        Ok(texts
            .iter()
            .map(|t| match t.strip_prefix("score:").and_then(|x| x.parse::<f64>().ok()) {
                Some(x) => vec![x, (1.0 - x * x).max(0.0).sqrt()],
                None => vec![1.0, 0.0],
            })
            .collect())
    }
}

pub fn sample_analysis_request() -> AnalysisRequest {
    let qa = RawQaPair {
        question_id: "Q1".into(),
        question_text: "Describe any difficulties you have when choosing an emoji to send.".into(),
        responses: vec![Response {
            participant_id: "P38".into(),
            answer_text: "Many faces sound the same when the screen reader announces them.".into(),
        }],
    };
    AnalysisRequest {
        paper_summary: "S".into(),
        raw_data_block: format_raw_data(&[&qa]).unwrap(),
        preceding_paragraph: "Participants used a range of devices.".into(),
        themes: vec!["emoji accessibility".into()],
        target_tokens: 200,
    }
}

pub const SAMPLE_ANSWERS: [&str; 3] = [
    "Participants described long spoken emoji names as a barrier.",
    "Several participants relied on a small set of familiar emoji.",
    "Misunderstandings were most common in group chats.",
];
