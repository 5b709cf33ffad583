//! Acceptance checks. Prints one line per criterion and exits non-zero if
//! any fails. The live check runs only when `QUALBENCH_API_KEY` is set;
//! `QUALBENCH_BASE_URL`, `QUALBENCH_MODEL` and `QUALBENCH_EMBED_MODEL`
//! select the endpoint.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use qualbench_core::gateway::mock::{Counting, EchoChat, ExtractiveChat, MockEmbedder};
use qualbench_core::gateway::openai::{api_key_from_env, OpenAiChat, API_KEY_ENV};
use qualbench_core::gateway::DiskCache;
use qualbench_core::{
    cosine, execute_run, iteration_stats, CompletionOptions, EmbeddingBackendConfig, Evaluator, Gateway, GatewayError,
    ModelConfig, PromptEngine, PromptString, RunConfig, RunLayout, TableFormat,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use common::{
    fast_gateway_config, fixture, mock_run_config, sample_analysis_request, score_chat, verbatim_chat, AngleEmbedder,
    SAMPLE_ANSWERS,
};

type Check = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {{
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    }};
}

fn random_vec(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        if v.iter().any(|x| *x != 0.0) {
            return v;
        }
    }
}

#[allow(clippy::approx_constant)]
fn ac1_similarity_math() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    for case in 0..1000 {
        let dim = rng.random_range(2..=64);
        let a = random_vec(&mut rng, dim);
        let b = random_vec(&mut rng, dim);
        let ab = cosine(&a, &b).map_err(|e| e.to_string())?;
        let ba = cosine(&b, &a).map_err(|e| e.to_string())?;
        ensure!((ab - ba).abs() <= 1e-12, "case {case}: asymmetric {ab} vs {ba}");
        let k = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = a.iter().map(|x| x * k).collect();
        let s = cosine(&scaled, &b).map_err(|e| e.to_string())?;
        ensure!((s - ab).abs() <= 1e-9, "case {case}: scale {k} changed {ab} to {s}");
        ensure!(
            (-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab),
            "case {case}: {ab} out of bounds"
        );
    }
    let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    ensure!((c - 0.70710678).abs() <= 1e-8, "([1,0],[1,1]) gave {c}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("1000 pairs, ([1,0],[1,1]) = {c:.8}, {elapsed:.2?}"))
}

fn two_pass_oracle(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn ac2_statistics_oracle() -> Check {
    let mut rng = StdRng::seed_from_u64(2);
    for case in 0..1000 {
        let xs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let stats = iteration_stats(&xs).map_err(|e| e.to_string())?;
        let (mean, sd) = two_pass_oracle(&xs);
        ensure!(
            (stats.mean - mean).abs() <= 1e-12,
            "case {case}: mean {} vs {mean}",
            stats.mean
        );
        ensure!((stats.sd - sd).abs() <= 1e-12, "case {case}: sd {} vs {sd}", stats.sd);
    }
    let stats = iteration_stats(&[0.7, 0.9]).map_err(|e| e.to_string())?;
    ensure!(stats.mean == 0.8, "mean of [0.7, 0.9] is {:?}", stats.mean);
    // 0.9 - 0.7 is exact in binary (Sterbenz), so half of it is the exact
    // population SD of the two stored inputs: 0.1 plus 2 ulp.
    let exact_sd = (0.9f64 - 0.7) / 2.0;
    ensure!(
        stats.sd == exact_sd,
        "sd of [0.7, 0.9] is {:?}, exact value {exact_sd:?}",
        stats.sd
    );
    ensure!((stats.sd - 0.1).abs() <= 1e-12, "sd {:?} not 0.1", stats.sd);
    Ok(format!(
        "1000 lists, [0.7,0.9] -> mean {:?}, sd {:?}",
        stats.mean, stats.sd
    ))
}

fn ac3_protocol_shape() -> Check {
    let start = Instant::now();
    let d = fixture();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let layout = RunLayout::new(dir.path(), "shape").map_err(|e| e.to_string())?;
    let gateway = Gateway::new(
        ExtractiveChat::default(),
        MockEmbedder::default(),
        fast_gateway_config(),
    );
    let eval = execute_run(
        &d,
        &mock_run_config("shape"),
        &gateway,
        &PromptEngine::default(),
        &layout,
    )
    .map_err(|e| e.to_string())?;
    let report = &eval.report;
    ensure!(
        report.item_scores.len() == 32,
        "{} item scores",
        report.item_scores.len()
    );
    ensure!(
        report.item_scores.iter().all(|s| s.stats.scores.len() == 5),
        "not every item has 5 scores"
    );
    let ids: Vec<u32> = report.item_scores.iter().map(|s| s.item_id).collect();
    ensure!(ids == (1..=32).collect::<Vec<_>>(), "item ids {ids:?}");
    let groups: Vec<(u32, u32)> = report
        .per_paper_groups
        .iter()
        .map(|g| (g.first_item, g.last_item))
        .collect();
    ensure!(groups == [(1, 27), (28, 28), (29, 32)], "groups {groups:?}");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("32 items x 5 scores, groups 1-27/28/29-32, {elapsed:.2?}"))
}

fn ac4_self_similarity() -> Check {
    let d = fixture();
    let cfg = mock_run_config("ceiling");
    let gateway = Gateway::new(
        verbatim_chat(&d, &cfg.model.model_name),
        MockEmbedder::default(),
        fast_gateway_config(),
    );
    let prompts = PromptEngine::default();
    let report = Evaluator::new(&gateway, &prompts)
        .evaluate_dataset(&d, &cfg)
        .map_err(|e| e.to_string())?
        .report;
    ensure!(
        report.item_scores.len() == 32 && report.errors.is_empty(),
        "incomplete run"
    );
    for s in &report.item_scores {
        ensure!(
            (s.stats.mean - 1.0).abs() <= 1e-9,
            "item {} mean {}",
            s.item_id,
            s.stats.mean
        );
        ensure!(s.stats.sd.abs() <= 1e-12, "item {} sd {}", s.item_id, s.stats.sd);
    }
    let flagged = report.flagged().count();
    ensure!(flagged == 0, "{flagged} items flagged");
    Ok("32 items at mean 1.0, sd 0.0, none flagged".into())
}

fn ac5_flagging() -> Check {
    let d = fixture();
    let cfg = mock_run_config("flags");
    let offsets = [-0.03, -0.01, 0.0, 0.01, 0.03];
    let chat = score_chat(&d, &cfg.model.model_name, move |id, it| {
        let mean = match id {
            5 => 0.437,
            26 => 0.503,
            _ => 0.70 + 0.01 * f64::from(id % 20),
        };
        mean + offsets[it as usize - 1]
    });
    let gateway = Gateway::new(chat, AngleEmbedder, fast_gateway_config());
    let prompts = PromptEngine::default();
    let report = Evaluator::new(&gateway, &prompts)
        .evaluate_dataset(&d, &cfg)
        .map_err(|e| e.to_string())?
        .report;
    ensure!(cfg.flag_threshold == 0.7, "threshold {}", cfg.flag_threshold);
    let flagged: Vec<u32> = report.flagged().map(|s| s.item_id).collect();
    ensure!(flagged == [5, 26], "flagged {flagged:?}");
    Ok("threshold 0.7 flags exactly items 5 and 26".into())
}

fn ac6_budget_guard() -> Check {
    let model = ModelConfig {
        model_name: "llama-2-13b-chat".into(),
        max_output_tokens: 500,
        context_window: 4000,
        ..ModelConfig::default()
    };
    let chat = Arc::new(Counting::new(EchoChat));
    let gateway = Gateway::new(chat.clone(), MockEmbedder::default(), fast_gateway_config());
    let opts = CompletionOptions {
        item_id: 1,
        iteration: 1,
        ..Default::default()
    };

    // 3501 heuristic tokens + 500 output > 4000.
    let over = PromptString::new("a".repeat(3501 * 4));
    match gateway.complete(&over, &model, opts) {
        Err(GatewayError::BudgetExceeded(b)) => ensure!(b.overflow() == 1, "overflow {}", b.overflow()),
        other => return Err(format!("expected BudgetExceeded, got {other:?}")),
    }
    ensure!(chat.calls() == 0, "{} provider calls before rejection", chat.calls());

    // Same through the evaluator: an oversized paper summary.
    let mut d = fixture();
    d.papers[0].summary = "word ".repeat(4000);
    let cfg = RunConfig {
        model: model.clone(),
        ..mock_run_config("budget")
    };
    let prompts = PromptEngine::default();
    let report = Evaluator::new(&gateway, &prompts)
        .evaluate_dataset(&d, &cfg)
        .map_err(|e| e.to_string())?
        .report;
    ensure!(
        report.errors.len() == 27,
        "{} item errors, expected 27",
        report.errors.len()
    );
    let paper1_calls = chat.calls();
    ensure!(
        paper1_calls == 5 * 5,
        "{paper1_calls} calls, expected 25 for papers 2 and 3"
    );

    // Exactly at the limit is accepted.
    let fits = PromptString::new("a".repeat(3500 * 4));
    gateway.complete(&fits, &model, opts).map_err(|e| e.to_string())?;
    Ok("overflowing prompts rejected with zero provider calls".into())
}

fn mock_run_csv(dir: &Path, run_id: &str, chat: Arc<Counting<ExtractiveChat>>) -> Result<Vec<u8>, String> {
    let layout = RunLayout::new(dir, run_id).map_err(|e| e.to_string())?;
    let gateway = Gateway::new(chat, MockEmbedder::default(), fast_gateway_config())
        .with_cache(DiskCache::open(layout.cache_dir()).map_err(|e| e.to_string())?);
    // Same run id in the config so the reports can match byte for byte.
    execute_run(
        &fixture(),
        &mock_run_config("determinism"),
        &gateway,
        &PromptEngine::default(),
        &layout,
    )
    .map_err(|e| e.to_string())?;
    fs::read(layout.table(TableFormat::Csv)).map_err(|e| e.to_string())
}

fn ac7_determinism_and_cache() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let chat = Arc::new(Counting::new(ExtractiveChat::default()));
    let a = mock_run_csv(dir.path(), "a", chat.clone())?;
    let b = mock_run_csv(dir.path(), "b", chat.clone())?;
    ensure!(a == b, "report.csv differs between identical runs");
    ensure!(chat.calls() == 2 * 32 * 5, "{} cold calls", chat.calls());
    chat.reset();
    let c = mock_run_csv(dir.path(), "a", chat.clone())?;
    ensure!(chat.calls() == 0, "warm re-run made {} provider calls", chat.calls());
    ensure!(a == c, "warm re-run changed report.csv");
    Ok(format!("identical report.csv ({} bytes), warm re-run 0 calls", a.len()))
}

fn golden(name: &str) -> Result<String, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn random_text(rng: &mut StdRng) -> String {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJ0123456789 ,.;:!?'()-";
    loop {
        let len = rng.random_range(1..=60);
        let s: String = (0..len)
            .map(|_| CHARS[rng.random_range(0..CHARS.len())] as char)
            .collect();
        if !s.trim().is_empty() {
            return s;
        }
    }
}

fn ac8_golden_prompts() -> Check {
    let engine = PromptEngine::default();
    let analysis = engine
        .build_analysis_prompt(&sample_analysis_request())
        .map_err(|e| e.to_string())?;
    ensure!(
        analysis.as_str() == golden("analysis_prompt.txt")?,
        "analysis prompt differs from golden"
    );
    let paper_text = fs::read_to_string(common::data_file("paper_text.txt")).map_err(|e| e.to_string())?;
    let summary = engine.build_summary_prompt(&paper_text).map_err(|e| e.to_string())?;
    ensure!(
        summary.as_str() == golden("summary_prompt.txt")?,
        "summary prompt differs from golden"
    );
    let question = engine
        .build_question_prompt(&SAMPLE_ANSWERS)
        .map_err(|e| e.to_string())?;
    ensure!(
        question.as_str() == golden("question_prompt.txt")?,
        "question prompt differs from golden"
    );

    let mut rng = StdRng::seed_from_u64(8);
    for case in 0..256 {
        let themes: Vec<String> = (0..rng.random_range(1..4)).map(|_| random_text(&mut rng)).collect();
        let req = qualbench_core::AnalysisRequest {
            paper_summary: random_text(&mut rng),
            raw_data_block: random_text(&mut rng),
            preceding_paragraph: random_text(&mut rng),
            themes: themes.clone(),
            target_tokens: rng.random_range(1..5000),
        };
        let p = engine.build_analysis_prompt(&req).map_err(|e| e.to_string())?;
        let text = p.as_str();
        let values = [
            &req.paper_summary,
            &req.raw_data_block,
            &req.preceding_paragraph,
            &req.target_tokens.to_string(),
        ];
        for v in values.into_iter().chain(&themes) {
            ensure!(text.contains(v.as_str()), "case {case}: analysis prompt lacks {v:?}");
        }
        ensure!(!text.contains("{{"), "case {case}: unrendered slot");

        let paper = random_text(&mut rng);
        let s = engine.build_summary_prompt(&paper).map_err(|e| e.to_string())?;
        ensure!(
            s.as_str().contains(&paper),
            "case {case}: summary prompt lacks paper text"
        );
        let answers: Vec<String> = (0..rng.random_range(1..6)).map(|_| random_text(&mut rng)).collect();
        let q = engine.build_question_prompt(&answers).map_err(|e| e.to_string())?;
        for a in &answers {
            ensure!(
                q.as_str().contains(a.as_str()),
                "case {case}: question prompt lacks {a:?}"
            );
        }
    }
    Ok("3 goldens match, 256 random bindings render verbatim".into())
}

fn ac9_live_smoke() -> Option<Check> {
    api_key_from_env().ok()?;
    Some((|| {
        let base = std::env::var("QUALBENCH_BASE_URL").unwrap_or_else(|_| ModelConfig::default().provider_base_url);
        let model_name = std::env::var("QUALBENCH_MODEL").unwrap_or_else(|_| ModelConfig::default().model_name);
        let embed_model = std::env::var("QUALBENCH_EMBED_MODEL").unwrap_or_else(|_| "text-embedding-3-small".into());
        let chat = OpenAiChat::from_env(&base).map_err(|e| e.to_string())?;
        let embedder = EmbeddingBackendConfig::OpenAi {
            base_url: base.clone(),
            model: embed_model,
        }
        .build()
        .map_err(|e| e.to_string())?;
        let gateway = Gateway::from_boxed(Box::new(chat), embedder, Default::default());
        let cfg = RunConfig {
            iterations: 2,
            model: ModelConfig {
                provider_base_url: base,
                model_name,
                ..ModelConfig::default()
            },
            ..RunConfig::default()
        };
        let d = fixture();
        let (paper, item) = d.find_item(1).ok_or("fixture item 1 missing")?;
        let prompts = PromptEngine::default();
        let outcome = Evaluator::new(&gateway, &prompts)
            .with_default_themes(d.default_themes.clone())
            .evaluate_item(item, paper, &cfg)
            .map_err(|e| e.to_string())?;
        ensure!(outcome.runs.len() == 2, "{} generations", outcome.runs.len());
        ensure!(
            outcome.runs.iter().all(|r| !r.output_text.is_empty()),
            "empty generation"
        );
        let stats = &outcome.score.stats;
        ensure!(
            stats.scores.iter().all(|s| (-1.0..=1.0).contains(s)),
            "scores {:?}",
            stats.scores
        );
        ensure!(stats.sd >= 0.0, "sd {}", stats.sd);
        Ok("2 live generations scored".to_string())
    })())
}

fn main() -> ExitCode {
    let checks: [Criterion; 8] = [
        ("AC1", "similarity math", ac1_similarity_math),
        ("AC2", "statistics oracle", ac2_statistics_oracle),
        ("AC3", "protocol shape", ac3_protocol_shape),
        ("AC4", "self-similarity ceiling", ac4_self_similarity),
        ("AC5", "flagging", ac5_flagging),
        ("AC6", "budget guard", ac6_budget_guard),
        ("AC7", "determinism and cache", ac7_determinism_and_cache),
        ("AC8", "golden prompts", ac8_golden_prompts),
    ];
    let mut failed = 0;
    let mut report = |id: &str, name: &str, result: Check| match result {
        Ok(detail) => println!("[PASS] {id} {name}: {detail}"),
        Err(why) => {
            failed += 1;
            println!("[FAIL] {id} {name}: {why}");
        }
    };
    for (id, name, check) in checks {
        report(id, name, check());
    }
    match ac9_live_smoke() {
        Some(result) => report("AC9", "live smoke test", result),
        None => println!("[SKIP] AC9 live smoke test: {API_KEY_ENV} not set"),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
