use serde::{Deserialize, Serialize};

use super::{Sentence, Vocab};

/// Smoothed idf over vocabulary ids: `ln((1 + N) / (1 + df)) + 1`.
///
/// Documents are id-mapped first, so out-of-vocabulary tokens share the
/// document frequency of UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    pub n_docs: usize,
    pub df: Vec<usize>,
}

impl TfIdfModel {
    pub fn fit(docs: &[Vec<usize>], vocab_size: usize) -> Self {
        let mut df = vec![0; vocab_size];
        let mut seen = vec![usize::MAX; vocab_size];
        for (d, doc) in docs.iter().enumerate() {
            for &id in doc {
                if seen[id] != d {
                    seen[id] = d;
                    df[id] += 1;
                }
            }
        }
        TfIdfModel {
            n_docs: docs.len(),
            df,
        }
    }

    pub fn fit_sentences(sentences: &[Sentence], vocab: &Vocab) -> Self {
        let docs: Vec<Vec<usize>> = sentences.iter().map(|s| vocab.encode(s)).collect();
        Self::fit(&docs, vocab.len())
    }

    pub fn idf(&self, id: usize) -> f64 {
        let df = self.df.get(id).copied().unwrap_or(0);
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    /// Per-position weight `tf(token in doc) · idf(token)`.
    pub fn weights(&self, ids: &[usize]) -> Vec<f64> {
        ids.iter()
            .map(|&id| {
                let tf = ids.iter().filter(|&&o| o == id).count() as f64;
                tf * self.idf(id)
            })
            .collect()
    }
}

pub fn tfidf_weights(sentence: &Sentence, vocab: &Vocab, model: &TfIdfModel) -> Vec<f64> {
    model.weights(&vocab.encode(sentence))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn term_in_every_doc_has_unit_idf() {
        let m = TfIdfModel::fit(&[vec![2, 3], vec![2], vec![2, 4]], 5);
        assert!((m.idf(2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn smoothed_idf_value() {
        let m = TfIdfModel::fit(&[vec![2, 3], vec![3], vec![3]], 4);
        assert!((m.idf(2) - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!((m.idf(2) - 1.693_147_180_559_945).abs() < 1e-12);
    }

    #[test]
    fn repeated_term_doubles_weight() {
        let m = TfIdfModel::fit(&[vec![2, 3], vec![3]], 4);
        let w = m.weights(&[2, 2, 3]);
        assert!((w[0] - 2.0 * m.idf(2)).abs() < 1e-15);
        assert_eq!(w[0], w[1]);
        assert!((w[2] - m.idf(3)).abs() < 1e-15);
    }

    #[test]
    fn idf_non_increasing_in_df() {
        let docs: Vec<Vec<usize>> = (0..10).map(|d| (0..=d).collect()).collect();
        let m = TfIdfModel::fit(&docs, 10);
        // id k appears in 10 - k documents.
        for k in 1..10 {
            assert!(m.idf(k) >= m.idf(k - 1));
            assert!(m.idf(k) >= 1.0);
        }
    }
}
