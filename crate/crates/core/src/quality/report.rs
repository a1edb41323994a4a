use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    answerability, cross_similarity, self_bleu, t_test, tokenize, QaScorer, QualityError,
    TTestVariant,
};
use crate::encoding::TextEncoder;
use crate::graph::{DatasetSplit, DialogGraph, NodeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSimilarity {
    pub node: String,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub metric: String,
    pub statistic: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Self-BLEU of the generated questions for n = 1..=5.
    pub self_bleu: BTreeMap<usize, f64>,
    /// Same for the human questions, when a human bank was supplied.
    pub human_self_bleu: Option<BTreeMap<usize, f64>>,
    pub avg_cross_similarity: Option<f64>,
    pub per_node_cross_similarity: Vec<NodeSimilarity>,
    pub avg_answerability: f64,
    /// Token count -> number of generated questions with that length.
    pub length_histogram: BTreeMap<usize, usize>,
    pub tests: Vec<TestResult>,
}

fn grouped(split: &DatasetSplit) -> BTreeMap<String, Vec<String>> {
    split
        .questions
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|e| e.text.clone()).collect()))
        .collect()
}

fn self_bleu_table(questions: &[String]) -> Result<BTreeMap<usize, f64>, QualityError> {
    (1..=5).map(|n| Ok((n, self_bleu::<f64, _>(questions, n)?))).collect()
}

fn answerability_scores(
    graph: &DialogGraph,
    split: &DatasetSplit,
    scorer: &dyn QaScorer,
) -> Result<Vec<f64>, QualityError> {
    let mut scores = Vec::new();
    for (node, entries) in &split.questions {
        let Some(n) = graph.node(&NodeId::new(node.clone())) else {
            continue;
        };
        for e in entries {
            scores.push(answerability(&[e.text.as_str()], &n.text, scorer)?);
        }
    }
    Ok(scores)
}

/// Diversity, similarity, answerability and length analysis of a generated
/// question bank, optionally compared against human questions.
pub fn build_quality_report(
    graph: &DialogGraph,
    generated: &DatasetSplit,
    human: Option<&DatasetSplit>,
    encoder: &dyn TextEncoder,
    scorer: &dyn QaScorer,
) -> Result<QualityReport, QualityError> {
    let gen_questions = generated.all_questions();
    let self_bleu = self_bleu_table(&gen_questions)?;

    let gen_answerability = answerability_scores(graph, generated, scorer)?;
    if gen_answerability.is_empty() {
        return Err(QualityError::CorpusTooSmall { needed: 1, got: 0 });
    }
    let avg_answerability = gen_answerability.iter().sum::<f64>() / gen_answerability.len() as f64;

    let gen_lengths: Vec<f64> = gen_questions.iter().map(|q| tokenize(q).len() as f64).collect();
    let mut length_histogram = BTreeMap::new();
    for l in &gen_lengths {
        *length_histogram.entry(*l as usize).or_insert(0) += 1;
    }

    let mut report = QualityReport {
        self_bleu,
        human_self_bleu: None,
        avg_cross_similarity: None,
        per_node_cross_similarity: Vec::new(),
        avg_answerability,
        length_histogram,
        tests: Vec::new(),
    };

    if let Some(human) = human {
        let human_questions = human.all_questions();
        report.human_self_bleu = Some(self_bleu_table(&human_questions)?);
        let (avg, per_node) = cross_similarity(&grouped(human), &grouped(generated), encoder)?;
        report.avg_cross_similarity = Some(avg);
        report.per_node_cross_similarity = per_node
            .into_iter()
            .map(|(node, similarity)| NodeSimilarity { node, similarity })
            .collect();

        let human_lengths: Vec<f64> = human_questions.iter().map(|q| tokenize(q).len() as f64).collect();
        let human_answerability = answerability_scores(graph, human, scorer)?;
        for (metric, a, b) in [
            ("question_length", &gen_lengths, &human_lengths),
            ("answerability", &gen_answerability, &human_answerability),
        ] {
            match t_test(a, b, TTestVariant::Welch) {
                Ok(r) => report.tests.push(TestResult {
                    metric: metric.into(),
                    statistic: r.t,
                    df: r.df,
                    p: r.p,
                }),
                Err(e) => log::warn!("skipping t-test on {metric}: {e}"),
            }
        }
    }
    Ok(report)
}

impl QualityReport {
    /// Self-BLEU rows aligned like a paper table: one row per bank, one column per n.
    pub fn to_text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<14}{:>7}{:>7}{:>7}{:>7}{:>7}", "Data", "n-1", "n-2", "n-3", "n-4", "n-5");
        let mut row = |name: &str, scores: &BTreeMap<usize, f64>| {
            let _ = write!(out, "{name:<14}");
            for n in 1..=5 {
                let _ = write!(out, "{:>7.2}", scores.get(&n).copied().unwrap_or(f64::NAN));
            }
            out.push('\n');
        };
        if let Some(h) = &self.human_self_bleu {
            row("Human", h);
        }
        row("Generated", &self.self_bleu);
        let _ = writeln!(out);
        let _ = writeln!(out, "avg answerability      {:.4}", self.avg_answerability);
        if let Some(s) = self.avg_cross_similarity {
            let _ = writeln!(out, "avg cross-similarity   {s:.4}");
        }
        for t in &self.tests {
            let _ = writeln!(
                out,
                "welch t-test {:<16} t={:>8.4} df={:>8.3} p={:.3e}",
                t.metric, t.statistic, t.df, t.p
            );
        }
        out
    }
}
