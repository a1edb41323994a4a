use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{DialogGraph, GraphError, NodeId, Result};

/// Where a bank entry came from. Human-collected entries carry none.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub method: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

/// One question or paraphrase. Serialized as a bare string when it has no
/// provenance, otherwise as `{"text", "method", "model", "timestamp"}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BankEntry {
    pub text: String,
    pub provenance: Option<Provenance>,
}

impl BankEntry {
    pub fn plain(text: impl Into<String>) -> Self {
        BankEntry {
            text: text.into(),
            provenance: None,
        }
    }

    pub fn method(&self) -> Option<&str> {
        self.provenance.as_ref().map(|p| p.method.as_str())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum WireEntry {
    Plain(String),
    Tagged {
        text: String,
        #[serde(flatten)]
        provenance: Provenance,
    },
}

impl Serialize for BankEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match &self.provenance {
            None => WireEntry::Plain(self.text.clone()).serialize(s),
            Some(p) => WireEntry::Tagged {
                text: self.text.clone(),
                provenance: p.clone(),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for BankEntry {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match WireEntry::deserialize(d)? {
            WireEntry::Plain(text) => BankEntry::plain(text),
            WireEntry::Tagged { text, provenance } => BankEntry {
                text,
                provenance: Some(provenance),
            },
        })
    }
}

/// Train or test utterance bank: user questions keyed by node id and answer
/// paraphrases keyed by answer id.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    #[serde(default)]
    pub questions: BTreeMap<String, Vec<BankEntry>>,
    #[serde(default)]
    pub paraphrases: BTreeMap<String, Vec<BankEntry>>,
}

impl DatasetSplit {
    pub fn parse(document: &str) -> Result<Self> {
        let mut split: DatasetSplit = serde_json::from_str(document).map_err(|e| {
            if e.is_syntax() || e.is_eof() {
                GraphError::Syntax {
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                }
            } else {
                GraphError::Schema(e.to_string())
            }
        })?;
        split.dedup();
        Ok(split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    /// Builds a split from the questions and paraphrases embedded in the graph file.
    pub fn from_graph_inline(graph: &DialogGraph) -> Self {
        let mut split = DatasetSplit::default();
        for node in graph.nodes() {
            if !node.questions.is_empty() {
                split.questions.insert(
                    node.id.as_str().to_owned(),
                    node.questions.iter().map(BankEntry::plain).collect(),
                );
            }
            for a in &node.answers {
                if !a.paraphrases.is_empty() {
                    split.paraphrases.insert(
                        a.id.clone(),
                        a.paraphrases.iter().map(BankEntry::plain).collect(),
                    );
                }
            }
        }
        split.dedup();
        split
    }

    /// Drops empty entries and case-insensitive duplicates, keeping the first.
    pub fn dedup(&mut self) {
        fn dedup_bank(bank: &mut BTreeMap<String, Vec<BankEntry>>) {
            for entries in bank.values_mut() {
                let mut seen = HashSet::new();
                entries.retain(|e| {
                    let key = e.text.trim().to_lowercase();
                    !key.is_empty() && seen.insert(key)
                });
            }
            bank.retain(|_, v| !v.is_empty());
        }
        dedup_bank(&mut self.questions);
        dedup_bank(&mut self.paraphrases);
    }

    /// Every key must name a node (questions) or answer (paraphrases) of `graph`.
    pub fn validate_against(&self, graph: &DialogGraph) -> Result<()> {
        for id in self.questions.keys() {
            if graph.node(&NodeId::new(id.clone())).is_none() {
                return Err(GraphError::UnknownSplitKey {
                    kind: "node",
                    id: id.clone(),
                });
            }
        }
        for id in self.paraphrases.keys() {
            if graph.answer(id).is_none() {
                return Err(GraphError::UnknownSplitKey {
                    kind: "answer",
                    id: id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn questions_for(&self, node: &NodeId) -> &[BankEntry] {
        self.questions.get(node.as_str()).map_or(&[], Vec::as_slice)
    }

    pub fn paraphrases_for(&self, answer_id: &str) -> &[BankEntry] {
        self.paraphrases.get(answer_id).map_or(&[], Vec::as_slice)
    }

    pub fn question_count(&self) -> usize {
        self.questions.values().map(Vec::len).sum()
    }

    pub fn paraphrase_count(&self) -> usize {
        self.paraphrases.values().map(Vec::len).sum()
    }

    /// Appends entries of `other`, then re-deduplicates.
    pub fn merge(&mut self, other: &DatasetSplit) {
        for (k, v) in &other.questions {
            self.questions.entry(k.clone()).or_default().extend(v.iter().cloned());
        }
        for (k, v) in &other.paraphrases {
            self.paraphrases.entry(k.clone()).or_default().extend(v.iter().cloned());
        }
        self.dedup();
    }

    /// All question texts, node by node in key order.
    pub fn all_questions(&self) -> Vec<String> {
        self.questions
            .values()
            .flat_map(|v| v.iter().map(|e| e.text.clone()))
            .collect()
    }
}
