use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::tokenize::{content_tokens, tokenize};
use super::QualityError;

/// Confidence in `[0, 1]` that `context` answers `question`.
pub trait QaScorer: Send + Sync {
    fn score(&self, question: &str, context: &str) -> Result<f64, QualityError>;
}

/// Fraction of the question's content tokens that occur in the context.
/// Questions without content tokens score 0.
#[derive(Clone, Copy, Debug, Default)]
pub struct OverlapScorer;

impl QaScorer for OverlapScorer {
    fn score(&self, question: &str, context: &str) -> Result<f64, QualityError> {
        let q = content_tokens(question);
        if q.is_empty() {
            return Ok(0.0);
        }
        let ctx: HashSet<String> = tokenize(context).into_iter().collect();
        let hits = q.iter().filter(|t| ctx.contains(*t)).count();
        Ok(hits as f64 / q.len() as f64)
    }
}

/// QA service: `POST {"question", "context"}` answered by `{"score"}`.
pub struct RemoteQaScorer {
    endpoint: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct QaRequest<'a> {
    question: &'a str,
    context: &'a str,
}

#[derive(Deserialize)]
struct QaResponse {
    score: f64,
}

impl RemoteQaScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        RemoteQaScorer {
            endpoint: endpoint.into(),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .build()
                .into(),
        }
    }
}

impl QaScorer for RemoteQaScorer {
    fn score(&self, question: &str, context: &str) -> Result<f64, QualityError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(QaRequest { question, context })
            .map_err(|e| QualityError::Scorer(e.to_string()))?;
        let body: QaResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| QualityError::Scorer(e.to_string()))?;
        Ok(body.score.clamp(0.0, 1.0))
    }
}

/// Mean scorer confidence over the questions.
pub fn answerability<S: AsRef<str>>(
    questions: &[S],
    context: &str,
    scorer: &dyn QaScorer,
) -> Result<f64, QualityError> {
    if questions.is_empty() {
        return Err(QualityError::CorpusTooSmall { needed: 1, got: 0 });
    }
    let mut sum = 0.0;
    for q in questions {
        sum += scorer.score(q.as_ref(), context)?;
    }
    Ok(sum / questions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Constant(f64);
    impl QaScorer for Constant {
        fn score(&self, _: &str, _: &str) -> Result<f64, QualityError> {
            Ok(self.0)
        }
    }

    const ANEMIA: &str = "Anemia symptoms include fatigue, pale skin and gums, blue color in the \
        whites of the eyes, brittle nails, irritability, dizziness, sore tongue, shortness of \
        breath, unusual food cravings, and headache.";

    #[test]
    fn constant_scorer() {
        assert_eq!(answerability(&["x", "y"], "ctx", &Constant(1.0)).unwrap(), 1.0);
    }

    #[test]
    fn subset_scores_one() {
        let v = answerability(&["Is fatigue a symptom?"], "fatigue is a symptom", &OverlapScorer)
            .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn anemia_fixture_hand_counts() {
        // "What are symptoms of anemia?"            -> symptoms, anemia: 2/2
        // "How do I know if I have anemia?"         -> know, anemia: 1/2
        // "Is a sore tongue a common symptom of anemia?"
        //                                           -> sore, tongue, common, symptom, anemia: 3/5
        let qs = [
            "What are symptoms of anemia?",
            "How do I know if I have anemia?",
            "Is a sore tongue a common symptom of anemia?",
        ];
        let v = answerability(&qs, ANEMIA, &OverlapScorer).unwrap();
        assert_abs_diff_eq!(v, (1.0 + 0.5 + 0.6) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(answerability::<&str>(&[], "ctx", &OverlapScorer).is_err());
    }
}
