//! Implementations of the `cts` subcommands. Each reads a [`RunConfig`] and
//! writes its artifacts under the run directory.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use cts_core::agent::{Checkpoint, CurvePoint, Trainer};
use cts_core::datagen::{
    GenerationFailure, GenerationOutcome, GenerationParams, Generator, HeuristicNer, LlmClient, NerProvider,
    OpenAiClient, QuestionMethod, RemoteNer, ScriptedClient, SystemClock,
};
use cts_core::eval::{evaluate, EvalReport, GreedyPolicy};
use cts_core::graph::{DatasetSplit, GraphStats, ParseOptions};
use cts_core::quality::{
    build_quality_report, export_density, tokenize, OverlapScorer, QaScorer, QualityReport, RemoteQaScorer,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::run::{env_factory, read_graph, read_split, Dataset, RunDir};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub train: GraphStats,
    pub test: GraphStats,
}

impl DatasetStats {
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<34}{:>10}{:>10}", "", "train", "test");
        let rows: [(&str, String, String); 7] = [
            ("nodes", self.train.node_count.to_string(), self.test.node_count.to_string()),
            ("tree depth", self.train.tree_depth.to_string(), self.test.tree_depth.to_string()),
            ("max node degree", self.train.max_node_degree.to_string(), self.test.max_node_degree.to_string()),
            ("questions", self.train.question_count.to_string(), self.test.question_count.to_string()),
            (
                "avg questions per answerable node",
                format!("{:.2}", self.train.avg_questions_per_answerable_node),
                format!("{:.2}", self.test.avg_questions_per_answerable_node),
            ),
            ("answer paraphrases", self.train.paraphrase_count.to_string(), self.test.paraphrase_count.to_string()),
            (
                "avg paraphrases per answer",
                format!("{:.2}", self.train.avg_paraphrases_per_answer),
                format!("{:.2}", self.test.avg_paraphrases_per_answer),
            ),
        ];
        for (name, a, b) in rows {
            let _ = writeln!(out, "{name:<34}{a:>10}{b:>10}");
        }
        out
    }
}

pub fn dataset_stats(config: &RunConfig) -> Result<DatasetStats> {
    let run = RunDir::create(config)?;
    let data = Dataset::load(config)?;
    let stats = DatasetStats {
        train: data.graph.compute_stats(&data.train),
        test: data.graph.compute_stats(&data.test),
    };
    run.write_artifact(&run.reports().join("dataset_stats.json"), "dataset stats", &stats)?;
    run.write_text(&run.reports().join("dataset_stats.txt"), &stats.to_text_table())?;
    Ok(stats)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationSummary {
    pub warnings: Vec<String>,
}

/// Parses the graph (unreachable nodes are errors when `strict`) and checks
/// that both banks only reference existing nodes and answers.
pub fn dataset_validate(config: &RunConfig, strict: bool) -> Result<ValidationSummary> {
    let options = ParseOptions {
        unreachable_is_error: strict,
    };
    let text = fs::read_to_string(&config.dataset.graph)
        .with_context(|| format!("reading {}", config.dataset.graph.display()))?;
    let (graph, warnings) = cts_core::graph::parse_graph_with(&text, &options)
        .with_context(|| format!("parsing {}", config.dataset.graph.display()))?;
    for (name, path) in [("train", &config.dataset.train), ("test", &config.dataset.test)] {
        read_split(path)?
            .validate_against(&graph)
            .with_context(|| format!("{name} split {}", path.display()))?;
    }
    if let Some(path) = &config.dataset.human {
        read_split(path)?
            .validate_against(&graph)
            .with_context(|| format!("human bank {}", path.display()))?;
    }
    graph.goal_candidates().context("goal candidates")?;
    Ok(ValidationSummary {
        warnings: warnings.iter().map(|w| format!("{w:?}")).collect(),
    })
}

fn llm_client(config: &RunConfig) -> Result<Box<dyn LlmClient>> {
    let g = &config.generation;
    Ok(match &g.fixture {
        Some(path) => Box::new(ScriptedClient::from_fixture(path)?),
        None => Box::new(OpenAiClient::from_env(
            g.endpoint.clone(),
            &g.api_key_env,
            Duration::from_secs(g.timeout_secs),
            g.retries,
        )?),
    })
}

fn ner(config: &RunConfig) -> Box<dyn NerProvider> {
    match &config.generation.ner_endpoint {
        Some(url) => Box::new(RemoteNer::new(url.clone(), Duration::from_secs(config.generation.timeout_secs))),
        None => Box::new(HeuristicNer),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationSummary {
    pub bank: PathBuf,
    pub entries: usize,
    pub failures: usize,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    run_id: &'a str,
    seed: u64,
    kind: &'a str,
    key: &'a str,
    message: &'a str,
}

fn write_generation(run: &RunDir, kind: &str, name: &str, outcome: &GenerationOutcome, entries: usize) -> Result<GenerationSummary> {
    let bank = run.generated().join(format!("{name}.json"));
    fs::write(&bank, outcome.bank.to_json()).with_context(|| format!("writing {}", bank.display()))?;
    let log_path = run.logs().join("generation_failures.jsonl");
    let mut log = fs::OpenOptions::new().create(true).append(true).open(&log_path)?;
    for GenerationFailure { key, message } in &outcome.failures {
        let record = FailureRecord {
            run_id: &run.run_id,
            seed: run.seed,
            kind,
            key,
            message,
        };
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
    }
    let summary = GenerationSummary {
        bank: bank.clone(),
        entries,
        failures: outcome.failures.len(),
    };
    run.write_artifact(&run.generated().join(format!("{name}.meta.json")), kind, &summary)?;
    Ok(summary)
}

fn generator_params(config: &RunConfig) -> GenerationParams {
    GenerationParams {
        model: config.generation.model.clone(),
        temperature: config.generation.temperature,
        max_tokens: config.generation.max_tokens,
    }
}

pub fn generate_questions(config: &RunConfig, method: Option<QuestionMethod>) -> Result<GenerationSummary> {
    let method = match method {
        Some(m) => m,
        None => config.generation.method.parse().map_err(anyhow::Error::msg)?,
    };
    let run = RunDir::create(config)?;
    let graph = read_graph(&config.dataset.graph, &ParseOptions::default())?;
    let client = llm_client(config)?;
    let ner = ner(config);
    let mut generator = Generator::new(client.as_ref(), ner.as_ref(), &SystemClock);
    generator.params = generator_params(config);
    generator.parallelism = config.generation.parallelism;
    let outcome = generator.question_bank(&graph, method);
    let name = format!("questions_{}", format!("{method:?}").to_lowercase());
    write_generation(&run, "generate questions", &name, &outcome, outcome.bank.question_count())
}

pub fn generate_responses(config: &RunConfig) -> Result<GenerationSummary> {
    let run = RunDir::create(config)?;
    let graph = read_graph(&config.dataset.graph, &ParseOptions::default())?;
    let client = llm_client(config)?;
    let ner = ner(config);
    let mut generator = Generator::new(client.as_ref(), ner.as_ref(), &SystemClock);
    generator.params = generator_params(config);
    generator.parallelism = config.generation.parallelism;
    let outcome = generator.generate_responses(&graph);
    write_generation(&run, "generate responses", "responses", &outcome, outcome.bank.paraphrase_count())
}

fn default_generated(config: &RunConfig) -> Result<PathBuf> {
    let method: QuestionMethod = config.generation.method.parse().map_err(anyhow::Error::msg)?;
    Ok(config
        .run_dir()
        .join("generated")
        .join(format!("questions_{}.json", format!("{method:?}").to_lowercase())))
}

fn question_lengths(split: &DatasetSplit) -> Vec<f64> {
    split.all_questions().iter().map(|q| tokenize(q).len() as f64).collect()
}

/// Quality report of a generated bank against the human bank, with density
/// source files for question lengths and per-node similarity.
pub fn quality_report(config: &RunConfig, generated: Option<&Path>, human: Option<&Path>) -> Result<QualityReport> {
    let run = RunDir::create(config)?;
    let graph = read_graph(&config.dataset.graph, &ParseOptions::default())?;
    let generated_path = match generated.or(config.quality.generated.as_deref()) {
        Some(p) => p.to_owned(),
        None => default_generated(config)?,
    };
    let generated = read_split(&generated_path)?;
    let human = match human.or(config.dataset.human.as_deref()) {
        Some(p) => Some(read_split(p)?),
        None => None,
    };
    let encoder = config.encoder.build();
    let scorer: Box<dyn QaScorer> = match &config.quality.qa_endpoint {
        Some(url) => Box::new(RemoteQaScorer::new(url.clone(), Duration::from_secs(config.generation.timeout_secs))),
        None => Box::new(OverlapScorer),
    };
    let report = build_quality_report(&graph, &generated, human.as_ref(), encoder.as_ref(), scorer.as_ref())?;

    let reports = run.reports();
    run.write_artifact(&reports.join("quality.json"), "quality report", &report)?;
    run.write_text(&reports.join("quality.txt"), &report.to_text_table())?;
    export_density(&question_lengths(&generated), &reports.join("density_question_length_generated.csv"))?;
    if let Some(h) = &human {
        let lengths = question_lengths(h);
        if !lengths.is_empty() {
            export_density(&lengths, &reports.join("density_question_length_human.csv"))?;
        }
    }
    let similarities: Vec<f64> = report.per_node_cross_similarity.iter().map(|n| n.similarity).collect();
    if !similarities.is_empty() {
        export_density(&similarities, &reports.join("density_cross_similarity.csv"))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub turns: u64,
    pub train_steps: u64,
    pub seconds: f64,
    pub best_turn: Option<u64>,
    pub best: Option<EvalReport>,
    pub checkpoint: PathBuf,
}

/// Writes the learning curve as CSV with the seed on every row.
pub fn write_curve(curve: &[CurvePoint], seed: u64, path: &Path) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from("seed,turn,loss,epsilon,success_guided,success_free,success_combined,f1,consistency\n");
    for p in curve {
        let _ = writeln!(
            out,
            "{seed},{},{},{},{},{},{},{},{}",
            p.turn,
            opt(p.loss),
            p.epsilon,
            p.success_guided,
            p.success_free,
            p.success_combined,
            opt(p.mode_f1),
            opt(p.mode_consistency)
        );
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Trains from scratch or from `resume`, saving a full checkpoint after every
/// evaluation interval.
pub fn train(config: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let run = RunDir::create(config)?;
    let data = Dataset::load(config)?;
    let factory = env_factory::<f32>(config, &data)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::<f32>::load(path)?;
            if ckpt.config != config.trainer {
                log::warn!("resuming with the trainer configuration stored in {}", path.display());
            }
            Trainer::from_checkpoint(ckpt, factory)?
        }
        None => Trainer::new(config.trainer.clone(), factory, config.seed)?,
    };
    let latest = run.checkpoints().join("latest.json");
    let curve_path = run.logs().join("curve.csv");
    let started = Instant::now();
    let total = trainer.config().total_turns;
    let interval = trainer.config().eval_frequency;
    while trainer.turn() < total {
        let next = ((trainer.turn() / interval + 1) * interval).min(total);
        trainer.run_until(next)?;
        if let Some(p) = trainer.curve().last() {
            log::info!(
                "turn {} eps {:.3} loss {:?} success {:.3} (guided {:.3}, free {:.3})",
                p.turn,
                p.epsilon,
                p.loss,
                p.success_combined,
                p.success_guided,
                p.success_free
            );
        }
        trainer.checkpoint().save(&latest)?;
        write_curve(trainer.curve(), config.seed, &curve_path)?;
    }
    trainer.run()?;
    trainer.checkpoint().save(&latest)?;
    write_curve(trainer.curve(), config.seed, &curve_path)?;

    let summary = TrainSummary {
        turns: trainer.turn(),
        train_steps: trainer.train_steps(),
        seconds: started.elapsed().as_secs_f64(),
        best_turn: trainer.best().map(|b| b.turn),
        best: trainer.best().map(|b| b.report.clone().without_episodes()),
        checkpoint: latest,
    };
    run.write_artifact(&run.reports().join("train.json"), "train", &summary)?;
    if let Some(best) = &summary.best {
        run.write_text(&run.reports().join("best_eval.txt"), &best.to_text_table())?;
    }
    Ok(summary)
}

/// Greedy evaluation of a checkpoint's best network on the test split.
pub fn evaluate_checkpoint(config: &RunConfig, checkpoint: &Path, dialogs: usize, seed: u64) -> Result<EvalReport> {
    let run = RunDir::create(config)?;
    let ckpt = Checkpoint::<f32>::load(checkpoint)?;
    let net = ckpt.policy_network();
    if net.config.embedding_dim != config.encoder.dim() {
        bail!(
            "checkpoint {} expects {}-dimensional embeddings but the configured encoder produces {}",
            checkpoint.display(),
            net.config.embedding_dim,
            config.encoder.dim()
        );
    }
    let data = Dataset::load(config)?;
    if data.test.question_count() == 0 {
        bail!("test split {} has no questions", config.dataset.test.display());
    }
    let factory = env_factory::<f32>(config, &data)?;
    let mut env = factory.eval_env(seed)?;
    let report = evaluate(&mut GreedyPolicy { net }, &mut env, dialogs)?;
    #[derive(Serialize)]
    struct Payload<'a> {
        checkpoint: &'a Path,
        eval_seed: u64,
        report: &'a EvalReport,
    }
    run.write_artifact(
        &run.reports().join("eval.json"),
        "evaluate",
        &Payload {
            checkpoint,
            eval_seed: seed,
            report: &report,
        },
    )?;
    run.write_text(&run.reports().join("eval.txt"), &report.to_text_table())?;
    Ok(report)
}
