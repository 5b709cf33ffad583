//! Run settings: built-in defaults, then an optional TOML or JSON file, then
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use qualbench_core::evaluator::{DEFAULT_FLAG_THRESHOLD, DEFAULT_ITERATIONS};
use qualbench_core::gateway::mock::DEFAULT_MOCK_DIM;
use qualbench_core::gateway::DiskCache;
use qualbench_core::{EmbeddingBackendConfig, GatewayConfig, ModelConfig, RunConfig};
use serde::{Deserialize, Serialize};

/// Flags shared by every subcommand.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// TOML or JSON config file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset directory containing dataset.json.
    #[arg(long, global = true, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Chat model name.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Base URL of the OpenAI-compatible endpoint.
    #[arg(long, global = true, value_name = "URL")]
    pub base_url: Option<String>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    /// Generations per item.
    #[arg(long, global = true)]
    pub iterations: Option<u32>,
    /// Items with a mean similarity below this are flagged.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Maximum concurrent provider requests.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Use offline mock providers instead of a live endpoint.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Output directory; runs are written to <out>/<run-id>/.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Run directory name. Defaults to a hash of the run settings, so an
    /// identical command reuses its cache.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Only evaluate these papers (repeatable).
    #[arg(long = "paper", global = true, value_name = "PAPER_ID")]
    pub papers: Vec<String>,
    /// Directory with prompt template overrides.
    #[arg(long, global = true, value_name = "DIR")]
    pub prompts: Option<PathBuf>,
    /// Also generate verification questions for each item.
    #[arg(long, global = true)]
    pub verify_questions: bool,
    /// Send prompts that overflow the model's context window anyway.
    #[arg(long, global = true)]
    pub allow_overflow: bool,
}

/// Contents of a config file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
    pub mock: Option<bool>,
    pub iterations: Option<u32>,
    pub threshold: Option<f64>,
    pub parallelism: Option<usize>,
    pub retry_cap: Option<u32>,
    pub papers: Vec<String>,
    pub prompts: Option<PathBuf>,
    pub verify_questions: Option<bool>,
    pub allow_budget_overflow: Option<bool>,
    pub model: Option<ModelConfig>,
    pub embedding: Option<EmbeddingBackendConfig>,
}

impl FileConfig {
    /// Parses by extension: `.json` as JSON, anything else as TOML. Relative
    /// paths inside the file are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
        let mut cfg: FileConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.out, &mut cfg.prompts].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ProviderMode {
    Live,
    Mock,
}

/// Fully resolved settings.
#[derive(Debug, Clone, Serialize)]
pub struct CliConfig {
    pub dataset: Option<PathBuf>,
    pub out: PathBuf,
    pub run_id: Option<String>,
    pub provider: ProviderMode,
    pub model: ModelConfig,
    pub embedding: EmbeddingBackendConfig,
    pub iterations: u32,
    pub threshold: f64,
    pub parallelism: usize,
    pub retry_cap: u32,
    pub papers: Vec<String>,
    pub prompts: Option<PathBuf>,
    pub verify_questions: bool,
    pub allow_budget_overflow: bool,
}

impl CliConfig {
    pub fn resolve(flags: &Overrides) -> Result<Self, String> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let gw = GatewayConfig::default();
        let mock = flags.mock || file.mock.unwrap_or(false);
        let mut model = file.model.unwrap_or_default();
        if let Some(m) = &flags.model {
            model.model_name = m.clone();
        }
        if let Some(u) = &flags.base_url {
            model.provider_base_url = u.clone();
        }
        if let Some(t) = flags.temperature {
            model.temperature = t;
        }
        let embedding = if mock {
            EmbeddingBackendConfig::Mock { dim: DEFAULT_MOCK_DIM }
        } else {
            file.embedding.unwrap_or_default()
        };
        let cfg = CliConfig {
            dataset: flags.dataset.clone().or(file.dataset),
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
            run_id: flags.run_id.clone().or(file.run_id),
            provider: if mock { ProviderMode::Mock } else { ProviderMode::Live },
            model,
            embedding,
            iterations: flags.iterations.or(file.iterations).unwrap_or(DEFAULT_ITERATIONS),
            threshold: flags.threshold.or(file.threshold).unwrap_or(DEFAULT_FLAG_THRESHOLD),
            parallelism: flags.parallelism.or(file.parallelism).unwrap_or(gw.parallelism),
            retry_cap: file.retry_cap.unwrap_or(gw.retry_cap),
            papers: if flags.papers.is_empty() {
                file.papers
            } else {
                flags.papers.clone()
            },
            prompts: flags.prompts.clone().or(file.prompts),
            verify_questions: flags.verify_questions || file.verify_questions.unwrap_or(false),
            allow_budget_overflow: flags.allow_overflow || file.allow_budget_overflow.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.iterations < 2 {
            return Err(format!("iterations must be at least 2, got {}", self.iterations));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(format!("threshold {} is outside [0, 1]", self.threshold));
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        self.model.validate().map_err(|e| e.to_string())
    }

    pub fn dataset_path(&self) -> Result<&Path, String> {
        self.dataset
            .as_deref()
            .ok_or_else(|| "no dataset given; pass --dataset or set `dataset` in the config file".into())
    }

    /// The explicit run id, or one derived from every setting that affects
    /// the results.
    pub fn run_id(&self) -> String {
        if let Some(id) = &self.run_id {
            return id.clone();
        }
        let settings = serde_json::json!({
            "dataset": self.dataset.as_ref().map(|p| p.to_string_lossy()),
            "provider": self.provider,
            "model": self.model,
            "embedding": self.embedding,
            "iterations": self.iterations,
            "threshold": self.threshold,
            "papers": self.papers,
            "prompts": self.prompts,
            "verify_questions": self.verify_questions,
        });
        let hash = DiskCache::key(&[&settings.to_string()]);
        let name: String = self
            .model
            .model_name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                    c
                } else {
                    '-'
                }
            })
            .collect();
        format!("{name}-{}", &hash[..12])
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            run_id: self.run_id(),
            model: self.model.clone(),
            embedding_backend: self.embedding.clone(),
            iterations: self.iterations,
            flag_threshold: self.threshold,
            allow_budget_overflow: self.allow_budget_overflow,
            verify_with_questions: self.verify_questions,
        }
    }

    pub fn gateway_config(&self) -> GatewayConfig {
        GatewayConfig {
            parallelism: self.parallelism,
            retry_cap: self.retry_cap,
            ..GatewayConfig::default()
        }
    }
}
