use std::collections::HashMap;

use super::Sentence;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercased surface → id. Ids 0 and 1 are PAD and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    pub min_count: usize,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, min_count: usize) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Id of a surface form; anything unknown maps to UNK.
    pub fn id(&self, surface: &str) -> usize {
        self.get(surface).unwrap_or(UNK)
    }

    /// Id of a retained surface form, `None` if it maps to UNK.
    pub fn get(&self, surface: &str) -> Option<usize> {
        self.index.get(&surface.to_lowercase()).copied().filter(|&i| i > UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, sentence: &Sentence) -> Vec<usize> {
        sentence.tokens.iter().map(|t| self.id(&t.surface)).collect()
    }
}

/// Tokens with count ≥ `min_count` get ids in descending frequency order,
/// ties broken lexicographically.
pub fn build_vocab(sentences: &[Sentence], min_count: usize) -> Vocab {
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for t in sentences.iter().flat_map(|s| &s.tokens) {
        *counts.entry(t.surface.to_lowercase()).or_default() += 1;
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(w, c)| *c >= min_count && w != PAD_TOKEN && w != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
        .into_iter()
        .chain(kept.into_iter().map(|(w, _)| w))
        .collect();
    Vocab::from_tokens(tokens, min_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguageTag, Sentiment, Token};

    fn sent(words: &[&str]) -> Sentence {
        Sentence {
            uid: "0".into(),
            tokens: words.iter().map(|w| Token::new(*w, LanguageTag::Hi)).collect(),
            sentiment: Sentiment::Neutral,
        }
    }

    #[test]
    fn frequency_order() {
        let v = build_vocab(&[sent(&["a", "a", "b"])], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("B"), 3);
    }

    #[test]
    fn min_count_sends_rare_to_unk() {
        let v = build_vocab(&[sent(&["a", "a", "b"])], 2);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn ties_are_lexicographic() {
        let v = build_vocab(&[sent(&["z", "m", "a", "m", "z", "a"])], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "m", "z"]);
    }

    #[test]
    fn lowercases() {
        let v = build_vocab(&[sent(&["Achaa", "achaa"])], 2);
        assert_eq!(v.id("ACHAA"), 2);
    }
}
