use std::collections::HashMap;

use super::tokenize::tokenize;
use super::QualityError;
use crate::Scalar;

/// Floor applied to zero n-gram precisions before taking logs.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngram_counts(tokens: &[String], k: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= k {
        for g in tokens.windows(k) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with uniform weights over orders `1..=n`, epsilon-floored
/// precisions and the closest-reference brevity penalty.
pub fn bleu<T: Scalar, S: AsRef<str>>(
    candidate: &str,
    references: &[S],
    n: usize,
) -> Result<T, QualityError> {
    let cand = tokenize(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r.as_ref())).collect();
    bleu_tokens(&cand, &refs, n)
}

pub(crate) fn bleu_tokens<T: Scalar>(
    cand: &[String],
    refs: &[Vec<String>],
    n: usize,
) -> Result<T, QualityError> {
    if n == 0 {
        return Err(QualityError::ZeroOrder);
    }
    if cand.is_empty() {
        return Err(QualityError::EmptyCandidate);
    }
    if refs.is_empty() {
        return Err(QualityError::EmptyReferences);
    }

    let mut log_sum = T::zero();
    for k in 1..=n {
        let cand_counts = ngram_counts(cand, k);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, k) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let total: usize = cand_counts.values().sum();
        let clipped: usize = cand_counts
            .iter()
            .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = if total == 0 {
            T::zero()
        } else {
            T::of_usize(clipped) / T::of_usize(total)
        };
        log_sum = log_sum + precision.max(T::of(BLEU_EPSILON)).ln();
    }
    let geo = (log_sum / T::of_usize(n)).exp();

    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let bp = if c < r {
        (T::one() - T::of_usize(r) / T::of_usize(c)).exp()
    } else {
        T::one()
    };
    Ok(bp * geo)
}

/// Mean BLEU of every item against all other items.
pub fn self_bleu<T: Scalar, S: AsRef<str>>(corpus: &[S], n: usize) -> Result<T, QualityError> {
    if corpus.len() < 2 {
        return Err(QualityError::CorpusTooSmall {
            needed: 2,
            got: corpus.len(),
        });
    }
    let tokens: Vec<Vec<String>> = corpus.iter().map(|s| tokenize(s.as_ref())).collect();
    let mut sum = T::zero();
    for i in 0..tokens.len() {
        let others: Vec<Vec<String>> = tokens
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, t)| t.clone())
            .collect();
        sum = sum + bleu_tokens::<T>(&tokens[i], &others, n)?;
    }
    Ok(sum / T::of_usize(tokens.len()))
}
