//! Run configuration files.

use std::fmt;
use std::path::{Path, PathBuf};

use cts_core::agent::TrainerConfig;
use cts_core::datagen::QuestionMethod;
use cts_core::encoding::EncoderConfig;
use cts_core::simulator::SimulatorConfig;
use serde::{Deserialize, Serialize};

/// A problem with one configuration field, addressed by its dotted path.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{field}: {message}")]
    Parse { field: String, message: String },
    #[error("invalid configuration:\n{}", format_issues(.0))]
    Invalid(Vec<ConfigIssue>),
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub graph: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    /// Human-written questions used as the reference in quality reports.
    #[serde(default)]
    pub human: Option<PathBuf>,
    /// One guided-mode opener per line; built-in openers when absent.
    #[serde(default)]
    pub openers: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Question method used when the command line does not name one.
    pub method: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Base URL of an OpenAI-compatible chat completion API.
    pub endpoint: String,
    pub api_key_env: String,
    /// Prompt-hash to completion table used instead of the live API.
    pub fixture: Option<PathBuf>,
    /// Remote NER service; the built-in heuristic is used when absent.
    pub ner_endpoint: Option<String>,
    pub parallelism: usize,
    pub timeout_secs: u64,
    pub retries: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            method: "v2".into(),
            model: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            max_tokens: 512,
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            fixture: None,
            ner_endpoint: None,
            parallelism: 4,
            timeout_secs: 60,
            retries: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    /// Generated bank to analyse; defaults to the run's generated questions.
    pub generated: Option<PathBuf>,
    /// Remote QA scorer; token overlap is used when absent.
    pub qa_endpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    /// JSON file with goal text templates per category.
    pub goal_texts: Option<PathBuf>,
    /// Environment variable holding the session salt. When unset the salt is
    /// kept in the run directory.
    pub salt_env: String,
    pub dialogs_per_session: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            goal_texts: None,
            salt_env: "CTS_SESSION_SALT".into(),
            dialogs_per_session: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seed: u64,
    pub dataset: DatasetPaths,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub quality: QualityConfig,
    #[serde(default)]
    pub serve: ServeConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl RunConfig {
    /// Reads, resolves and validates a configuration file. Relative paths
    /// are taken relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        let issues = config.validate();
        if !issues.is_empty() {
            return Err(ConfigError::Invalid(issues));
        }
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Parse {
                field: if field == "." { "(root)".into() } else { field },
                message: e.into_inner().to_string(),
            }
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.dataset.graph);
        fix(&mut self.dataset.train);
        fix(&mut self.dataset.test);
        for p in [
            &mut self.dataset.human,
            &mut self.dataset.openers,
            &mut self.generation.fixture,
            &mut self.quality.generated,
            &mut self.serve.goal_texts,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut issue = |field: &str, message: String| {
            issues.push(ConfigIssue {
                field: field.into(),
                message,
            })
        };
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            issue("run_id", "must be a non-empty plain directory name".into());
        }
        let files = [
            ("dataset.graph", Some(&self.dataset.graph)),
            ("dataset.train", Some(&self.dataset.train)),
            ("dataset.test", Some(&self.dataset.test)),
            ("dataset.human", self.dataset.human.as_ref()),
            ("dataset.openers", self.dataset.openers.as_ref()),
            ("generation.fixture", self.generation.fixture.as_ref()),
            ("serve.goal_texts", self.serve.goal_texts.as_ref()),
        ];
        for (field, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    issue(field, format!("file {} does not exist", p.display()));
                }
            }
        }
        if self.encoder.dim() == 0 {
            issue("encoder.dim", "must be positive".into());
        }
        if self.trainer.network.embedding_dim != self.encoder.dim() {
            issue(
                "trainer.network.embedding_dim",
                format!("is {} but the encoder produces {}", self.trainer.network.embedding_dim, self.encoder.dim()),
            );
        }
        if let Err(message) = self.simulator.validate() {
            issue("simulator", message);
        }
        for (field, message) in self.trainer.validate() {
            issue(&format!("trainer.{field}"), message);
        }
        if let Err(message) = self.generation.method.parse::<QuestionMethod>() {
            issue("generation.method", message);
        }
        if self.generation.parallelism == 0 {
            issue("generation.parallelism", "must be positive".into());
        }
        if self.serve.dialogs_per_session == 0 {
            issue("serve.dialogs_per_session", "must be positive".into());
        }
        issues
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }
}
