//! Word-level language-tagged, sentence-level sentiment-labelled corpora.
//!
//! On-disk format, one record per sentence:
//!
//! ```text
//! meta<TAB>17<TAB>positive
//! aap<TAB>Hin
//! se<TAB>Hin
//! request<TAB>Eng
//! hain<TAB>Hin
//!
//! ```
//!
//! Records are separated by blank lines. Space separated meta lines are
//! accepted; [`write_corpus`] always emits tabs.

mod split;
mod synth;
mod tfidf;
mod vocab;

pub use split::split;
pub use synth::{generate_synthetic, sp_label, LabelRule, SynthConfig};
pub use tfidf::{tfidf_weights, TfIdfModel};
pub use vocab::{build_vocab, Vocab, PAD, UNK};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageTag {
    #[serde(rename = "HI")]
    Hi,
    #[serde(rename = "EN")]
    En,
    #[serde(rename = "OTHER")]
    Other,
}

impl LanguageTag {
    /// Raw tag as written by the serializer.
    pub fn raw(self) -> &'static str {
        match self {
            LanguageTag::Hi => "Hin",
            LanguageTag::En => "Eng",
            LanguageTag::Other => "O",
        }
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LanguageTag::Hi => "HI",
            LanguageTag::En => "EN",
            LanguageTag::Other => "OTHER",
        })
    }
}

/// Case-insensitive: `hin`/`hi` → HI, `eng`/`en` → EN, anything else → OTHER.
pub fn normalize_tag(raw: &str) -> LanguageTag {
    match raw.trim().to_ascii_lowercase().as_str() {
        "hin" | "hi" => LanguageTag::Hi,
        "eng" | "en" => LanguageTag::En,
        _ => LanguageTag::Other,
    }
}

/// Sentence-level label. The discriminant is the class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }
}

impl FromStr for Sentiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(Sentiment::Negative),
            "neutral" => Ok(Sentiment::Neutral),
            "positive" => Ok(Sentiment::Positive),
            other => Err(format!("unknown sentiment `{other}`")),
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub tag: LanguageTag,
}

impl Token {
    pub fn new(surface: impl Into<String>, tag: LanguageTag) -> Self {
        Token {
            surface: surface.into(),
            tag,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub uid: String,
    pub tokens: Vec<Token>,
    pub sentiment: Sentiment,
}

impl Sentence {
    pub fn tags(&self) -> Vec<LanguageTag> {
        self.tokens.iter().map(|t| t.tag).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Right-truncates to at most `max_len` tokens.
    pub fn truncated(&self, max_len: usize) -> Sentence {
        let mut s = self.clone();
        s.tokens.truncate(max_len);
        s
    }
}

pub fn parse_corpus(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_str(&text, &path.display().to_string())
}

/// Parses corpus text; `origin` names the source in error messages.
pub fn parse_corpus_str(text: &str, origin: &str) -> Result<Vec<Sentence>> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };

    let mut out = Vec::new();
    let mut current: Option<(usize, Sentence)> = None;

    let finish = |cur: Option<(usize, Sentence)>, out: &mut Vec<Sentence>| -> Result<()> {
        if let Some((line, s)) = cur {
            if s.tokens.is_empty() {
                return Err(err(line, format!("record `{}` has no tokens", s.uid)));
            }
            out.push(s);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(current.take(), &mut out)?;
            continue;
        }
        match &mut current {
            None => {
                let fields: Vec<&str> = if line.contains('\t') {
                    line.split('\t').collect()
                } else {
                    line.split_whitespace().collect()
                };
                if fields.first().map(|f| f.trim()) != Some("meta") {
                    return Err(err(lineno, format!("expected meta line, found `{line}`")));
                }
                if fields.len() != 3 {
                    return Err(err(
                        lineno,
                        format!("meta line needs uid and sentiment, found `{line}`"),
                    ));
                }
                let sentiment = fields[2].parse::<Sentiment>().map_err(|m| err(lineno, m))?;
                current = Some((
                    lineno,
                    Sentence {
                        uid: fields[1].trim().to_string(),
                        tokens: Vec::new(),
                        sentiment,
                    },
                ));
            }
            Some((_, sentence)) => {
                let (surface, tag) = match line.split_once('\t') {
                    Some((s, t)) => (s, t),
                    None => {
                        let f: Vec<&str> = line.split_whitespace().collect();
                        match f.as_slice() {
                            [s, t] => (*s, *t),
                            _ => {
                                return Err(err(
                                    lineno,
                                    format!("token line needs surface and tag, found `{line}`"),
                                ))
                            }
                        }
                    }
                };
                if surface.is_empty() {
                    return Err(err(lineno, "empty token surface".into()));
                }
                if surface == "meta" && tag.split('\t').count() == 2 {
                    return Err(err(lineno, "meta line inside record (missing blank line?)".into()));
                }
                sentence.tokens.push(Token::new(surface, normalize_tag(tag)));
            }
        }
    }
    finish(current.take(), &mut out)?;
    Ok(out)
}

pub fn write_corpus(sentences: &[Sentence]) -> String {
    let mut s = String::new();
    for sent in sentences {
        s.push_str(&format!("meta\t{}\t{}\n", sent.uid, sent.sentiment));
        for t in &sent.tokens {
            s.push_str(&format!("{}\t{}\n", t.surface, t.tag.raw()));
        }
        s.push('\n');
    }
    s
}

pub fn save_corpus(path: impl AsRef<Path>, sentences: &[Sentence]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_corpus(sentences)).map_err(|e| Error::io(path, e))
}
