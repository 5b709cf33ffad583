mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qualbench_core::gateway::mock::{EchoChat, ExtractiveChat, MockEmbedder};
use qualbench_core::gateway::openai::OpenAiChat;
use qualbench_core::gateway::{ChatProvider, DiskCache};
use qualbench_core::run::emit_reports;
use qualbench_core::{
    execute_run, load_dataset, read_dataset, validate_dataset, CompletionOptions, DatasetError, EvaluationReport,
    Gateway, PromptEngine, RunLayout,
};

use config::{CliConfig, Overrides, ProviderMode};

#[derive(Debug, Parser)]
#[command(
    name = "qualbench",
    version,
    about = "Benchmark LLM qualitative analysis against reference passages"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Overrides,
    /// Log progress to stderr (-vv for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a dataset and print every issue found.
    Validate,
    /// Summarize a paper's text (background and methods only) into <out>/summary.txt.
    Summarize {
        /// Plain-text file with the paper's contents.
        paper_text: PathBuf,
    },
    /// Generate, score and report every selected item.
    Run,
    /// Re-emit tables, plot data and summary from <out>/<run-id>/report.json.
    Report,
}

/// A failed command: exit status and message.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(message: impl ToString) -> Self {
        Failure {
            code: 1,
            message: message.to_string(),
        }
    }

    fn io(message: impl ToString) -> Self {
        Failure {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<String> for Failure {
    fn from(message: String) -> Self {
        Failure::new(message)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Validate => cmd_validate(&cli.flags),
        Command::Summarize { paper_text } => cmd_summarize(&cli.flags, paper_text),
        Command::Run => cmd_run(&cli.flags),
        Command::Report => cmd_report(&cli.flags),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dataset_failure(e: DatasetError) -> Failure {
    if e.is_io() {
        Failure::io(e)
    } else {
        Failure::new(e)
    }
}

fn cmd_validate(flags: &Overrides) -> Result<(), Failure> {
    let cfg = CliConfig::resolve(flags)?;
    let path = cfg.dataset_path()?;
    let dataset = read_dataset(path).map_err(dataset_failure)?;
    let issues = validate_dataset(&dataset);
    for issue in &issues {
        println!("{issue}");
    }
    let errors = issues.iter().filter(|i| i.is_error()).count();
    println!(
        "{}: {} papers, {} items, {errors} errors, {} warnings",
        path.display(),
        dataset.papers.len(),
        dataset.item_count(),
        issues.len() - errors
    );
    if errors > 0 {
        return Err(Failure::new(format!("{errors} validation errors")));
    }
    Ok(())
}

fn prompt_engine(cfg: &CliConfig) -> Result<PromptEngine, Failure> {
    match &cfg.prompts {
        Some(dir) => PromptEngine::from_dir(dir).map_err(Failure::new),
        None => Ok(PromptEngine::default()),
    }
}

fn live_chat(cfg: &CliConfig) -> Result<OpenAiChat, Failure> {
    OpenAiChat::from_env(&cfg.model.provider_base_url).map_err(Failure::new)
}

fn build_gateway(cfg: &CliConfig, mock_chat: impl ChatProvider + 'static) -> Result<Gateway, Failure> {
    let gw_cfg = cfg.gateway_config();
    Ok(match cfg.provider {
        ProviderMode::Mock => Gateway::new(mock_chat, MockEmbedder::default(), gw_cfg),
        ProviderMode::Live => {
            let embedder = cfg.embedding.build().map_err(Failure::new)?;
            Gateway::from_boxed(Box::new(live_chat(cfg)?), embedder, gw_cfg)
        }
    })
}

fn cmd_summarize(flags: &Overrides, paper_text: &Path) -> Result<(), Failure> {
    let cfg = CliConfig::resolve(flags)?;
    let text = fs::read_to_string(paper_text).map_err(|e| Failure::io(format!("{}: {e}", paper_text.display())))?;
    let prompt = prompt_engine(&cfg)?.build_summary_prompt(&text).map_err(Failure::new)?;
    let gateway = build_gateway(&cfg, EchoChat)?;
    let opts = CompletionOptions {
        iteration: 1,
        allow_overflow: cfg.allow_budget_overflow,
        ..Default::default()
    };
    let run = gateway.complete(&prompt, &cfg.model, opts).map_err(Failure::new)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Failure::io(format!("{}: {e}", cfg.out.display())))?;
    let path = cfg.out.join("summary.txt");
    let mut summary = run.output_text;
    if !summary.ends_with('\n') {
        summary.push('\n');
    }
    fs::write(&path, summary).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_run(flags: &Overrides) -> Result<(), Failure> {
    let cfg = CliConfig::resolve(flags)?;
    let mut dataset = load_dataset(cfg.dataset_path()?).map_err(dataset_failure)?;
    if !cfg.papers.is_empty() {
        if let Some(p) = cfg.papers.iter().find(|p| dataset.paper(p).is_none()) {
            return Err(Failure::new(format!("unknown paper {p:?}")));
        }
        dataset = dataset.select_papers(&cfg.papers);
    }
    let run_cfg = cfg.run_config();
    let layout = RunLayout::new(&cfg.out, &run_cfg.run_id).map_err(Failure::new)?;
    let prompts = prompt_engine(&cfg)?;
    let cache = DiskCache::open(layout.cache_dir())
        .map_err(|e| Failure::io(format!("{}: {e}", layout.cache_dir().display())))?;
    let gateway = build_gateway(&cfg, ExtractiveChat::default())?.with_cache(cache);

    log::info!("run {} -> {}", run_cfg.run_id, layout.root().display());
    let evaluation = execute_run(&dataset, &run_cfg, &gateway, &prompts, &layout).map_err(Failure::new)?;
    let stats = gateway.stats();
    let report = &evaluation.report;
    eprintln!(
        "scored {} items ({} errors, {} flagged); provider calls: {} chat, {} embedding; cache hits: {}",
        report.item_scores.len(),
        report.errors.len(),
        report.flagged().count(),
        stats.chat_calls,
        stats.embed_calls,
        stats.cache_hits
    );
    for e in &report.errors {
        eprintln!("item {}: {}", e.item_id, e.message);
    }
    println!("{}", layout.summary_md().display());
    if report.item_scores.is_empty() {
        return Err(Failure::new("no item could be scored"));
    }
    Ok(())
}

fn cmd_report(flags: &Overrides) -> Result<(), Failure> {
    let cfg = CliConfig::resolve(flags)?;
    let layout = RunLayout::new(&cfg.out, &cfg.run_id()).map_err(Failure::new)?;
    let report = EvaluationReport::read(&layout.report_json()).map_err(|e| match e {
        qualbench_core::ReportError::IoFailure { .. } => Failure::io(e),
        e => Failure::new(e),
    })?;
    emit_reports(&layout, &report).map_err(Failure::new)?;
    println!("{}", layout.summary_md().display());
    Ok(())
}
