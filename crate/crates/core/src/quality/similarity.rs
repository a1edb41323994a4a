use std::collections::BTreeMap;

use super::QualityError;
use crate::encoding::{cosine, TextEncoder};

/// Per node, the mean cosine over the human x generated product; the overall
/// value weights nodes equally. Nodes missing from either bank are skipped.
pub fn cross_similarity<S: AsRef<str>>(
    human: &BTreeMap<String, Vec<S>>,
    generated: &BTreeMap<String, Vec<S>>,
    encoder: &dyn TextEncoder,
) -> Result<(f64, Vec<(String, f64)>), QualityError> {
    let mut per_node = Vec::new();
    for (node, h_items) in human {
        let Some(g_items) = generated.get(node) else {
            continue;
        };
        if h_items.is_empty() || g_items.is_empty() {
            continue;
        }
        let h_vecs = h_items
            .iter()
            .map(|t| encoder.encode(t.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let g_vecs = g_items
            .iter()
            .map(|t| encoder.encode(t.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut sum = 0.0;
        for h in &h_vecs {
            for g in &g_vecs {
                sum += cosine(h, g)?;
            }
        }
        per_node.push((node.clone(), sum / (h_vecs.len() * g_vecs.len()) as f64));
    }
    if per_node.is_empty() {
        return Err(QualityError::NoOverlappingNodes);
    }
    let avg = per_node.iter().map(|(_, s)| s).sum::<f64>() / per_node.len() as f64;
    Ok((avg, per_node))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{EmbeddingVector, EncodeError, HashedNGramEncoder};
    use approx::assert_abs_diff_eq;

    /// Unigram one-hot encoder over a fixed vocabulary (collision-free).
    struct Vocab(Vec<&'static str>);

    impl TextEncoder for Vocab {
        fn dim(&self) -> usize {
            self.0.len()
        }
        fn encode(&self, text: &str) -> Result<EmbeddingVector<f64>, EncodeError> {
            let mut v = vec![0.0; self.0.len()];
            for w in text.split_whitespace() {
                if let Some(i) = self.0.iter().position(|x| *x == w) {
                    v[i] += 1.0;
                }
            }
            Ok(EmbeddingVector::normalized(v))
        }
    }

    fn bank(items: &[(&str, &[&'static str])]) -> BTreeMap<String, Vec<&'static str>> {
        items.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()
    }

    #[test]
    fn identical_single_items() {
        let h = bank(&[("n1", &["how much is the hotel"])]);
        let (avg, per) = cross_similarity(&h, &h, &HashedNGramEncoder::default()).unwrap();
        assert_abs_diff_eq!(avg, 1.0, epsilon = 1e-12);
        assert_eq!(per.len(), 1);
    }

    #[test]
    fn disjoint_tokens_zero() {
        let enc = Vocab(vec!["a", "b", "c", "d"]);
        let h = bank(&[("n1", &["a b"])]);
        let g = bank(&[("n1", &["c d"])]);
        assert_eq!(cross_similarity(&h, &g, &enc).unwrap().0, 0.0);
    }

    #[test]
    fn bank_against_itself_two_items() {
        // "a" = (1,0,0), "a b" = (1,1,0)/sqrt2; pairs: 1, 1/sqrt2, 1/sqrt2, 1
        let enc = Vocab(vec!["a", "b", "c"]);
        let h = bank(&[("n1", &["a", "a b"])]);
        let (avg, _) = cross_similarity(&h, &h, &enc).unwrap();
        assert_abs_diff_eq!(avg, (2.0 + 2.0 / 2f64.sqrt()) / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn nodes_weighted_equally_and_order_invariant() {
        let enc = Vocab(vec!["a", "b", "c"]);
        let h = bank(&[("n1", &["a"]), ("n2", &["a", "b", "c"])]);
        let g = bank(&[("n1", &["a"]), ("n2", &["c", "b", "a"])]);
        let (avg, per) = cross_similarity(&h, &g, &enc).unwrap();
        assert_abs_diff_eq!(per[0].1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(per[1].1, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(avg, (1.0 + 1.0 / 3.0) / 2.0, epsilon = 1e-12);
        let g_rev = bank(&[("n1", &["a"]), ("n2", &["a", "b", "c"])]);
        assert_abs_diff_eq!(cross_similarity(&h, &g_rev, &enc).unwrap().0, avg, epsilon = 1e-12);
    }

    #[test]
    fn no_overlap_errors() {
        let h = bank(&[("n1", &["a"])]);
        let g = bank(&[("n2", &["a"])]);
        assert!(matches!(
            cross_similarity(&h, &g, &HashedNGramEncoder::default()),
            Err(QualityError::NoOverlappingNodes)
        ));
    }
}
