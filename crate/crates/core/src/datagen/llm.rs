use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.7,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("request failed after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("malformed completion response: {0}")]
    Protocol(String),
    #[error("environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("no scripted completion for prompt {0}")]
    Unscripted(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, LlmError>;
}

/// Hex sha256 of the JSON-serialized message list; the key used by scripted fixtures.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct OpenAiClient {
    base_url: String,
    api_key: String,
    retries: usize,
    backoff: Duration,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl OpenAiClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration, retries: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        OpenAiClient {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            api_key: api_key.into(),
            retries: retries.max(1),
            backoff: Duration::from_millis(500),
            agent,
        }
    }

    /// Reads the key from `key_var`.
    pub fn from_env(base_url: impl Into<String>, key_var: &str, timeout: Duration, retries: usize) -> Result<Self, LlmError> {
        let key = std::env::var(key_var).map_err(|_| LlmError::MissingApiKey(key_var.to_owned()))?;
        Ok(Self::new(base_url, key, timeout, retries))
    }
}

impl LlmClient for OpenAiClient {
    fn complete(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = CompletionRequest {
            model: &params.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let mut last = String::new();
        for attempt in 0..self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1)));
            }
            let sent = self
                .agent
                .post(&url)
                .header("Authorization", &format!("Bearer {}", self.api_key))
                .send_json(&body);
            let mut resp = match sent {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("completion attempt {} failed: {e}", attempt + 1);
                    last = e.to_string();
                    continue;
                }
            };
            let parsed: CompletionResponse = resp
                .body_mut()
                .read_json()
                .map_err(|e| LlmError::Protocol(e.to_string()))?;
            return parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| LlmError::Protocol("no choices in response".into()));
        }
        Err(LlmError::Transport {
            attempts: self.retries,
            message: last,
        })
    }
}

/// Deterministic client answering from a prompt-hash -> completion table.
/// Every request is recorded so tests can inspect rendered prompts.
#[derive(Default)]
pub struct ScriptedClient {
    table: HashMap<String, String>,
    fallback: Option<String>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(table: HashMap<String, String>) -> Self {
        ScriptedClient {
            table,
            ..Default::default()
        }
    }

    /// Loads a JSON object mapping prompt hashes to completions.
    pub fn from_fixture(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        let table = serde_json::from_str(&text).map_err(|e| LlmError::Fixture(e.to_string()))?;
        Ok(Self::from_map(table))
    }

    pub fn insert(&mut self, messages: &[ChatMessage], completion: impl Into<String>) {
        self.table.insert(prompt_hash(messages), completion.into());
    }

    /// Completion returned for prompts missing from the table.
    pub fn with_fallback(mut self, completion: impl Into<String>) -> Self {
        self.fallback = Some(completion.into());
        self
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().expect("calls lock").clone()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, LlmError> {
        self.calls.lock().expect("calls lock").push(messages.to_vec());
        let hash = prompt_hash(messages);
        self.table
            .get(&hash)
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or(LlmError::Unscripted(hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msgs(text: &str) -> Vec<ChatMessage> {
        vec![ChatMessage {
            role: Role::User,
            content: text.into(),
        }]
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        assert_eq!(prompt_hash(&msgs("a")), prompt_hash(&msgs("a")));
        assert_ne!(prompt_hash(&msgs("a")), prompt_hash(&msgs("b")));
        assert_eq!(prompt_hash(&msgs("a")).len(), 64);
    }

    #[test]
    fn scripted_lookup_and_fallback() {
        let mut c = ScriptedClient::new();
        c.insert(&msgs("q"), "1. x");
        let p = GenerationParams::default();
        assert_eq!(c.complete(&msgs("q"), &p).unwrap(), "1. x");
        assert!(matches!(c.complete(&msgs("r"), &p), Err(LlmError::Unscripted(_))));
        let c = c.with_fallback("1. y");
        assert_eq!(c.complete(&msgs("r"), &p).unwrap(), "1. y");
        assert_eq!(c.calls().len(), 3);
    }

    #[test]
    fn wire_roles_are_lowercase() {
        let json = serde_json::to_string(&msgs("hi")).unwrap();
        assert_eq!(json, r#"[{"role":"user","content":"hi"}]"#);
    }

    #[test]
    fn missing_key_reported() {
        let err = OpenAiClient::from_env("http://localhost", "CTS_SURELY_UNSET_KEY_VAR", Duration::from_secs(1), 1);
        assert!(matches!(err, Err(LlmError::MissingApiKey(_))));
    }
}
