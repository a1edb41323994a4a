use serde::{Deserialize, Serialize};

use super::{DatasetSplit, DialogGraph};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    /// Maximum number of edges on a cycle-free path from the start node.
    pub tree_depth: usize,
    /// Maximum number of answers leaving one node.
    pub max_node_degree: usize,
    pub question_count: usize,
    /// Averaged over nodes with at least one question.
    pub avg_questions_per_answerable_node: f64,
    pub paraphrase_count: usize,
    /// Averaged over answers with at least one paraphrase.
    pub avg_paraphrases_per_answer: f64,
}

fn average(total: usize, groups: usize) -> f64 {
    if groups == 0 {
        0.0
    } else {
        total as f64 / groups as f64
    }
}

impl DialogGraph {
    pub fn compute_stats(&self, bank: &DatasetSplit) -> GraphStats {
        let question_count = bank.question_count();
        let paraphrase_count = bank.paraphrase_count();
        GraphStats {
            node_count: self.len(),
            tree_depth: self.tree_depth(),
            max_node_degree: self.nodes().iter().map(|n| n.answers.len()).max().unwrap_or(0),
            question_count,
            avg_questions_per_answerable_node: average(
                question_count,
                bank.questions.values().filter(|v| !v.is_empty()).count(),
            ),
            paraphrase_count,
            avg_paraphrases_per_answer: average(
                paraphrase_count,
                bank.paraphrases.values().filter(|v| !v.is_empty()).count(),
            ),
        }
    }

    pub fn tree_depth(&self) -> usize {
        let succ: Vec<Vec<usize>> = self
            .nodes()
            .iter()
            .map(|n| n.successors().map(|t| self.idx(t).expect("validated edge")).collect())
            .collect();
        let start = self.idx(self.start()).expect("start exists");
        match longest_acyclic(&succ, start) {
            Some(d) => d,
            None => {
                let mut on_path = vec![false; succ.len()];
                longest_simple_path(&succ, start, &mut on_path)
            }
        }
    }
}

/// Longest path by memoized DFS; `None` when a cycle is reachable.
fn longest_acyclic(succ: &[Vec<usize>], start: usize) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done(usize),
    }
    fn visit(i: usize, succ: &[Vec<usize>], marks: &mut [Mark]) -> Option<usize> {
        match marks[i] {
            Mark::Done(d) => return Some(d),
            Mark::Active => return None,
            Mark::New => {}
        }
        marks[i] = Mark::Active;
        let mut best = 0;
        for &j in &succ[i] {
            best = best.max(1 + visit(j, succ, marks)?);
        }
        marks[i] = Mark::Done(best);
        Some(best)
    }
    let mut marks = vec![Mark::New; succ.len()];
    visit(start, succ, &mut marks)
}

fn longest_simple_path(succ: &[Vec<usize>], i: usize, on_path: &mut [bool]) -> usize {
    on_path[i] = true;
    let mut best = 0;
    for &j in &succ[i] {
        if !on_path[j] {
            best = best.max(1 + longest_simple_path(succ, j, on_path));
        }
    }
    on_path[i] = false;
    best
}
