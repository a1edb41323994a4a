use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::DatagenError;
use crate::quality::content_tokens;

pub trait NerProvider: Send + Sync {
    /// Unique entity strings in order of first occurrence. Each one is a
    /// substring of the whitespace-normalized input.
    fn entities(&self, text: &str) -> Result<Vec<String>, DatagenError>;
}

pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Pattern-based extractor: bracketed terms, numbers with units, runs of
/// capitalized words and single capitalized content words.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicNer;

struct Patterns {
    bracket: Regex,
    quantity: Regex,
    cap_run: Regex,
    cap_word: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| Patterns {
        bracket: Regex::new(r"[(\[]([^()\[\]]+)[)\]]").unwrap(),
        quantity: Regex::new(r"\b\d+(?:[.,]\d+)?\s?(?:%|€|\$|\p{L}+\b)").unwrap(),
        cap_run: Regex::new(r"\b\p{Lu}[\p{L}\d'-]*(?:\s+\p{Lu}[\p{L}\d'-]*)+").unwrap(),
        cap_word: Regex::new(r"\b\p{Lu}[\p{L}\d'-]+").unwrap(),
    })
}

fn is_stopword(word: &str) -> bool {
    content_tokens(word).is_empty()
}

impl NerProvider for HeuristicNer {
    fn entities(&self, text: &str) -> Result<Vec<String>, DatagenError> {
        let text = normalize_whitespace(text);
        let p = patterns();
        // (span start, span end, entity start, entity end)
        let mut taken: Vec<(usize, usize, usize, usize)> = Vec::new();
        let overlaps = |taken: &[(usize, usize, usize, usize)], s: usize, e: usize| {
            taken.iter().any(|&(ts, te, _, _)| s < te && ts < e)
        };

        for c in p.bracket.captures_iter(&text) {
            let (whole, inner) = (c.get(0).unwrap(), c.get(1).unwrap());
            let trimmed = inner.as_str().trim();
            if trimmed.is_empty() {
                continue;
            }
            let start = inner.start() + inner.as_str().find(trimmed).unwrap_or(0);
            taken.push((whole.start(), whole.end(), start, start + trimmed.len()));
        }
        for m in p.quantity.find_iter(&text) {
            if !overlaps(&taken, m.start(), m.end()) {
                taken.push((m.start(), m.end(), m.start(), m.end()));
            }
        }
        for m in p.cap_run.find_iter(&text) {
            // drop leading stopwords such as a sentence-initial "The"
            let mut start = m.start();
            for w in m.as_str().split(' ') {
                if !is_stopword(w) {
                    break;
                }
                start += w.len() + 1;
            }
            if start < m.end() && !overlaps(&taken, start, m.end()) {
                taken.push((start, m.end(), start, m.end()));
            }
        }
        for m in p.cap_word.find_iter(&text) {
            if !is_stopword(m.as_str()) && !overlaps(&taken, m.start(), m.end()) {
                taken.push((m.start(), m.end(), m.start(), m.end()));
            }
        }

        taken.sort_by_key(|t| t.2);
        let mut seen = HashSet::new();
        Ok(taken
            .into_iter()
            .map(|(_, _, s, e)| text[s..e].to_owned())
            .filter(|ent| seen.insert(ent.to_lowercase()))
            .collect())
    }
}

/// NER service client: `POST {"text": ...}` answered by `{"entities": [...]}`.
/// Entities that are not substrings of the input are dropped.
pub struct RemoteNer {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct NerRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct NerResponse {
    entities: Vec<String>,
}

impl RemoteNer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteNer {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl NerProvider for RemoteNer {
    fn entities(&self, text: &str) -> Result<Vec<String>, DatagenError> {
        let text = normalize_whitespace(text);
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(NerRequest { text: &text })
            .map_err(|e| DatagenError::Ner(e.to_string()))?;
        let body: NerResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| DatagenError::Ner(e.to_string()))?;
        let mut seen = HashSet::new();
        Ok(body
            .entities
            .into_iter()
            .map(|e| normalize_whitespace(&e))
            .filter(|e| !e.is_empty() && text.contains(e.as_str()) && seen.insert(e.to_lowercase()))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ents(text: &str) -> Vec<String> {
        HeuristicNer.entities(text).unwrap()
    }

    #[test]
    fn mixed_entities() {
        assert_eq!(
            ents("The Travel Office refunds trips (Dienstreise) longer than 14 days in Germany."),
            vec!["Travel Office", "Dienstreise", "14 days", "Germany"]
        );
    }

    #[test]
    fn plain_lowercase_text_has_none() {
        assert!(ents("you can book a room yourself.").is_empty());
    }

    #[test]
    fn duplicates_collapse() {
        assert_eq!(ents("Anemia is common. anemia? Anemia!"), vec!["Anemia"]);
    }

    proptest! {
        #[test]
        fn entities_are_substrings(text in "[A-Za-z0-9 ()\\[\\].,%]{0,80}") {
            let norm = normalize_whitespace(&text);
            for e in ents(&text) {
                prop_assert!(!e.is_empty());
                prop_assert!(norm.contains(&e), "{e:?} not in {norm:?}");
            }
        }
    }
}
