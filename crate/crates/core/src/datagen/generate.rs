use std::collections::{BTreeMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{
    parse_numbered_list, render_prompt, template, Bindings, DatagenError, GenerationParams,
    LlmClient, Method, NerProvider,
};
use crate::graph::{BankEntry, DatasetSplit, DialogGraph, DialogNode, Provenance};

/// Minimum bank size per node for method V3.
pub const V3_TARGET: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuestionMethod {
    V1,
    V2,
    V3,
}

impl std::str::FromStr for QuestionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(QuestionMethod::V1),
            "v2" => Ok(QuestionMethod::V2),
            "v3" => Ok(QuestionMethod::V3),
            other => Err(format!("unknown question method {other:?}, expected v1, v2 or v3")),
        }
    }
}

pub trait Clock: Send + Sync {
    /// RFC 3339 timestamp recorded in provenance.
    fn now(&self) -> String;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> String {
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }
}

pub struct FixedClock(pub String);

impl Clock for FixedClock {
    fn now(&self) -> String {
        self.0.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenerationFailure {
    /// Node id for questions, answer id for paraphrases.
    pub key: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenerationOutcome {
    pub bank: DatasetSplit,
    pub failures: Vec<GenerationFailure>,
}

pub struct Generator<'a> {
    client: &'a dyn LlmClient,
    ner: &'a dyn NerProvider,
    clock: &'a dyn Clock,
    pub params: GenerationParams,
    pub parallelism: usize,
}

fn dedup_into(bank: &mut Vec<BankEntry>, seen: &mut HashSet<String>, items: Vec<BankEntry>) {
    for e in items {
        let key = e.text.trim().to_lowercase();
        if !key.is_empty() && seen.insert(key) {
            bank.push(e);
        }
    }
}

impl<'a> Generator<'a> {
    pub fn new(client: &'a dyn LlmClient, ner: &'a dyn NerProvider, clock: &'a dyn Clock) -> Self {
        Generator {
            client,
            ner,
            clock,
            params: GenerationParams::default(),
            parallelism: 4,
        }
    }

    /// One prompt round trip. An empty parse is re-asked once; surplus items
    /// beyond the requested count are dropped.
    fn ask(&self, method: Method, bindings: Bindings) -> Result<Vec<BankEntry>, DatagenError> {
        let count = bindings.count.unwrap_or(template(method).default_count);
        let messages = render_prompt(&template(method), &bindings)?;
        let mut items = parse_numbered_list(&self.client.complete(&messages, &self.params)?);
        if items.is_empty() {
            log::warn!("empty {method:?} completion, asking again");
            items = parse_numbered_list(&self.client.complete(&messages, &self.params)?);
        }
        if items.is_empty() {
            return Err(DatagenError::EmptyGeneration);
        }
        items.truncate(count);
        let provenance = Provenance {
            method: serde_json::to_value(method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            model: self.params.model.clone(),
            timestamp: Some(self.clock.now()),
        };
        Ok(items
            .into_iter()
            .map(|text| BankEntry {
                text,
                provenance: Some(provenance.clone()),
            })
            .collect())
    }

    fn node_text(node: &DialogNode) -> Result<&str, DatagenError> {
        let text = node.text.trim();
        if text.is_empty() {
            return Err(DatagenError::EmptyNodeText(node.id.to_string()));
        }
        Ok(text)
    }

    /// Up to `n` questions from a single V1 or V2 prompt.
    pub fn generate_questions(&self, node: &DialogNode, method: Method, n: usize) -> Result<Vec<BankEntry>, DatagenError> {
        let text = Self::node_text(node)?;
        let mut out = Vec::new();
        dedup_into(&mut out, &mut HashSet::new(), self.ask(method, Bindings::node(text).with_count(n))?);
        Ok(out)
    }

    /// Three questions on the whole node, three per named entity, then a
    /// V2 top-up to `V3_TARGET` if the bank is still short.
    pub fn generate_questions_v3(&self, node: &DialogNode) -> Result<Vec<BankEntry>, DatagenError> {
        let text = Self::node_text(node)?;
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        dedup_into(&mut out, &mut seen, self.ask(Method::V3Base, Bindings::node(text))?);
        for entity in self.ner.entities(text)? {
            dedup_into(&mut out, &mut seen, self.ask(Method::V3Entity, Bindings::node(text).with_ner(entity))?);
        }
        if out.len() < V3_TARGET {
            let missing = V3_TARGET - out.len();
            dedup_into(&mut out, &mut seen, self.ask(Method::V2, Bindings::node(text).with_count(missing))?);
        }
        Ok(out)
    }

    fn questions_for(&self, node: &DialogNode, method: QuestionMethod) -> Result<Vec<BankEntry>, DatagenError> {
        match method {
            QuestionMethod::V1 => self.generate_questions(node, Method::V1, 10),
            QuestionMethod::V2 => self.generate_questions(node, Method::V2, 10),
            QuestionMethod::V3 => self.generate_questions_v3(node),
        }
    }

    /// Question bank over every goal candidate of the graph. Per-node
    /// failures are collected, not fatal.
    pub fn question_bank(&self, graph: &DialogGraph, method: QuestionMethod) -> GenerationOutcome {
        let nodes: Vec<&DialogNode> = match graph.goal_candidates() {
            Ok(ids) => ids.iter().filter_map(|id| graph.node(id)).collect(),
            Err(e) => {
                log::warn!("no question targets: {e}");
                Vec::new()
            }
        };
        let results = self.run_parallel(&nodes, |node| self.questions_for(node, method));
        let mut outcome = GenerationOutcome::default();
        for (node, result) in nodes.iter().zip(results) {
            let key = node.id.to_string();
            match result {
                Ok(entries) if !entries.is_empty() => {
                    outcome.bank.questions.insert(key, entries);
                }
                Ok(_) => {}
                Err(e) => {
                    log::warn!("question generation failed for {key}: {e}");
                    outcome.failures.push(GenerationFailure {
                        key,
                        message: e.to_string(),
                    });
                }
            }
        }
        outcome
    }

    fn responses_for(&self, node: &DialogNode, response: &str) -> Result<Vec<BankEntry>, DatagenError> {
        let text = Self::node_text(node)?;
        let bindings = Bindings::node(text).with_response(response);
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        dedup_into(&mut out, &mut seen, self.ask(Method::A, bindings.clone())?);
        dedup_into(&mut out, &mut seen, self.ask(Method::B, bindings)?);
        Ok(out)
    }

    /// Five paraphrases and five keyword variants for every answer of every
    /// node that takes user input.
    pub fn generate_responses(&self, graph: &DialogGraph) -> GenerationOutcome {
        let jobs: Vec<(&DialogNode, &str, &str)> = graph
            .nodes()
            .iter()
            .filter(|n| n.expects_reply())
            .flat_map(|n| n.answers.iter().map(move |a| (n, a.id.as_str(), a.prototype_text.as_str())))
            .collect();
        if jobs.is_empty() {
            log::warn!("graph has no nodes taking user input; response bank is empty");
        }
        let results = self.run_parallel(&jobs, |(node, _, response)| self.responses_for(node, response));
        let mut outcome = GenerationOutcome::default();
        for ((_, answer, _), result) in jobs.iter().zip(results) {
            match result {
                Ok(entries) if !entries.is_empty() => {
                    outcome.bank.paraphrases.insert((*answer).to_owned(), entries);
                }
                Ok(_) => {}
                Err(e) => {
                    log::warn!("response generation failed for {answer}: {e}");
                    outcome.failures.push(GenerationFailure {
                        key: (*answer).to_owned(),
                        message: e.to_string(),
                    });
                }
            }
        }
        outcome
    }

    /// Maps `f` over `items` on up to `parallelism` threads, returning
    /// results in input order.
    fn run_parallel<I: Sync, R: Send>(&self, items: &[I], f: impl Fn(&I) -> R + Sync) -> Vec<R> {
        let workers = self.parallelism.clamp(1, items.len().max(1));
        if workers == 1 {
            return items.iter().map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Mutex<BTreeMap<usize, R>> = Mutex::new(BTreeMap::new());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(item) = items.get(i) else { break };
                    let r = f(item);
                    slots.lock().expect("result lock").insert(i, r);
                });
            }
        });
        slots.into_inner().expect("result lock").into_values().collect()
    }
}
