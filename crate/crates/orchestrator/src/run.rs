//! Run directories, dataset loading and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use cts_core::graph::{parse_graph_with, DatasetSplit, DialogGraph, ParseOptions};
use cts_core::simulator::{default_openers, EnvFactory};
use cts_core::Scalar;
use serde::Serialize;

use crate::config::RunConfig;

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// `<output_dir>/<run_id>` with a config snapshot and the standard subdirectories.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub run_id: String,
    pub seed: u64,
}

impl RunDir {
    pub fn create(config: &RunConfig) -> Result<Self> {
        let root = config.run_dir();
        for sub in ["checkpoints", "logs", "reports", "generated"] {
            fs::create_dir_all(root.join(sub)).with_context(|| format!("creating {}", root.join(sub).display()))?;
        }
        let dir = RunDir {
            root,
            run_id: config.run_id.clone(),
            seed: config.seed,
        };
        dir.write_json(&dir.root.join("config.json"), config)?;
        Ok(dir)
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn generated(&self) -> PathBuf {
        self.root.join("generated")
    }

    pub fn write_json<S: Serialize + ?Sized>(&self, path: &Path, value: &S) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    /// Writes `payload` wrapped with the run id, seed and command.
    pub fn write_artifact<S: Serialize>(&self, path: &Path, command: &str, payload: &S) -> Result<()> {
        let envelope = Artifact {
            run_id: &self.run_id,
            seed: self.seed,
            command,
            created_ms: now_ms(),
            payload,
        };
        self.write_json(path, &envelope)
    }

    /// Plain-text report with a header line naming run and seed.
    pub fn write_text(&self, path: &Path, body: &str) -> Result<()> {
        let text = format!("# run {} seed {}\n{body}", self.run_id, self.seed);
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Serialize)]
struct Artifact<'a, S> {
    run_id: &'a str,
    seed: u64,
    command: &'a str,
    created_ms: u64,
    payload: &'a S,
}

pub fn read_split(path: &Path) -> Result<DatasetSplit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    DatasetSplit::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn read_graph(path: &Path, options: &ParseOptions) -> Result<DialogGraph> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (graph, warnings) = parse_graph_with(&text, options).with_context(|| format!("parsing {}", path.display()))?;
    for w in warnings {
        log::warn!("{}: {w:?}", path.display());
    }
    Ok(graph)
}

/// Graph plus validated train and test banks.
pub struct Dataset {
    pub graph: Arc<DialogGraph>,
    pub train: Arc<DatasetSplit>,
    pub test: Arc<DatasetSplit>,
}

impl Dataset {
    pub fn load(config: &RunConfig) -> Result<Self> {
        let graph = read_graph(&config.dataset.graph, &ParseOptions::default())?;
        let train = read_split(&config.dataset.train)?;
        let test = read_split(&config.dataset.test)?;
        train.validate_against(&graph).context("train split")?;
        test.validate_against(&graph).context("test split")?;
        Ok(Dataset {
            graph: Arc::new(graph),
            train: Arc::new(train),
            test: Arc::new(test),
        })
    }
}

pub fn openers(config: &RunConfig) -> Result<Vec<String>> {
    match &config.dataset.openers {
        None => Ok(default_openers()),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_owned).collect())
        }
    }
}

/// Simulator factory over the configured dataset and encoder.
pub fn env_factory<T: Scalar>(config: &RunConfig, data: &Dataset) -> Result<EnvFactory<T>> {
    Ok(EnvFactory::new(
        data.graph.clone(),
        data.train.clone(),
        data.test.clone(),
        openers(config)?,
        config.encoder.build(),
        config.simulator.clone(),
    )?)
}
