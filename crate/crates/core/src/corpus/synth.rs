use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LanguageTag, Sentence, Sentiment, Token};
use crate::error::{Error, Result};
use crate::switching::detect_switch_points;

const OTHER_SURFACES: [&str; 6] = ["!", "?", "...", ":)", "@user", "#tag"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Labels independent of the tokens, equal class counts.
    RandomBalanced,
    /// Parity of the switch-point count, see [`sp_label`].
    SpParity,
    /// Length of the longest monolingual stretch, see [`longest_run_label`].
    SpLongestRun,
}

impl LabelRule {
    /// Label implied by the tags, or `None` for token-independent labels.
    pub fn label(self, tags: &[LanguageTag]) -> Option<Sentiment> {
        match self {
            LabelRule::RandomBalanced => None,
            LabelRule::SpParity => Some(sp_label(tags)),
            LabelRule::SpLongestRun => Some(longest_run_label(tags)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub sentences: usize,
    pub mean_len: usize,
    /// Lengths are uniform in `mean_len ± len_jitter`; `None` means `mean_len / 2`.
    pub len_jitter: Option<usize>,
    pub hi_vocab: usize,
    pub en_vocab: usize,
    /// Probability that the language flips between adjacent tokens.
    pub switch_prob: f64,
    /// Probability that a token is an OTHER-tagged symbol.
    pub other_prob: f64,
    pub label_rule: LabelRule,
    /// Rejection-sample until every class has the same count.
    pub balance: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 600,
            mean_len: 12,
            len_jitter: None,
            hi_vocab: 60,
            en_vocab: 60,
            switch_prob: 0.2,
            other_prob: 0.0,
            label_rule: LabelRule::SpLongestRun,
            balance: true,
        }
    }
}

/// Label of the switching-point rule:
/// no switch point → neutral, an odd number → positive, an even number → negative.
pub fn sp_label(tags: &[LanguageTag]) -> Sentiment {
    let n = if tags.is_empty() {
        0
    } else {
        detect_switch_points(tags).len()
    };
    match n {
        0 => Sentiment::Neutral,
        n if n % 2 == 1 => Sentiment::Positive,
        _ => Sentiment::Negative,
    }
}

/// Longest gap between consecutive switch points, counting the sentence
/// boundaries as switch points.
pub fn longest_run(tags: &[LanguageTag]) -> usize {
    let mut cuts: Vec<usize> = vec![0];
    cuts.extend(detect_switch_points(tags).iter().map(|p| p.position));
    cuts.push(tags.len());
    cuts.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
}

/// Label of the longest-run rule: at most 3 tokens → negative,
/// 4 to 6 → neutral, 7 or more → positive.
pub fn longest_run_label(tags: &[LanguageTag]) -> Sentiment {
    match longest_run(tags) {
        0..=3 => Sentiment::Negative,
        4..=6 => Sentiment::Neutral,
        _ => Sentiment::Positive,
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        for (name, p) in [("switch_prob", self.switch_prob), ("other_prob", self.other_prob)] {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.other_prob >= 1.0 && self.label_rule == LabelRule::SpParity && self.balance {
            return Err(Error::Config("other_prob 1 leaves no switching points to label".into()));
        }
        if self.mean_len == 0 {
            return Err(Error::Config("mean_len must be positive".into()));
        }
        if self.hi_vocab == 0 || self.en_vocab == 0 {
            return Err(Error::Config("per-language vocabularies must be non-empty".into()));
        }
        Ok(())
    }

    fn length_range(&self) -> (usize, usize) {
        let jitter = self.len_jitter.unwrap_or(self.mean_len / 2).min(self.mean_len - 1);
        (self.mean_len - jitter, self.mean_len + jitter)
    }
}

struct Lexicon {
    hi: Vec<String>,
    en: Vec<String>,
    hi_dist: WeightedIndex<f64>,
    en_dist: WeightedIndex<f64>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        // Zipfian word frequencies within each language.
        let zipf = |n: usize| WeightedIndex::new((0..n).map(|r| 1.0 / (r + 1) as f64)).expect("n > 0");
        Lexicon {
            hi: (0..cfg.hi_vocab).map(|i| format!("h{i}")).collect(),
            en: (0..cfg.en_vocab).map(|i| format!("e{i}")).collect(),
            hi_dist: zipf(cfg.hi_vocab),
            en_dist: zipf(cfg.en_vocab),
        }
    }

    fn word<R: Rng>(&self, tag: LanguageTag, rng: &mut R) -> String {
        match tag {
            LanguageTag::Hi => self.hi[self.hi_dist.sample(rng)].clone(),
            LanguageTag::En => self.en[self.en_dist.sample(rng)].clone(),
            LanguageTag::Other => OTHER_SURFACES.choose(rng).expect("non-empty").to_string(),
        }
    }
}

fn sample_tokens<R: Rng>(cfg: &SynthConfig, lex: &Lexicon, rng: &mut R) -> Vec<Token> {
    let (lo, hi) = cfg.length_range();
    let len = rng.gen_range(lo..=hi);
    let mut lang = if rng.gen_bool(0.5) {
        LanguageTag::Hi
    } else {
        LanguageTag::En
    };
    let mut tokens = Vec::with_capacity(len);
    for i in 0..len {
        if i > 0 && rng.gen_bool(cfg.switch_prob) {
            lang = match lang {
                LanguageTag::Hi => LanguageTag::En,
                _ => LanguageTag::Hi,
            };
        }
        let tag = if cfg.other_prob > 0.0 && rng.gen_bool(cfg.other_prob) {
            LanguageTag::Other
        } else {
            lang
        };
        tokens.push(Token::new(lex.word(tag, rng), tag));
    }
    tokens
}

/// Deterministic synthetic code-mixed corpus.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Vec<Sentence>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lex = Lexicon::new(cfg);
    let n = cfg.sentences;

    match cfg.label_rule {
        LabelRule::RandomBalanced => {
            let mut labels: Vec<Sentiment> = (0..n).map(|i| Sentiment::ALL[i % 3]).collect();
            labels.shuffle(&mut rng);
            Ok(labels
                .into_iter()
                .enumerate()
                .map(|(i, sentiment)| Sentence {
                    uid: format!("syn{i}"),
                    tokens: sample_tokens(cfg, &lex, &mut rng),
                    sentiment,
                })
                .collect())
        }
        rule => {
            let mut quota = [n / 3; 3];
            for q in quota.iter_mut().take(n % 3) {
                *q += 1;
            }
            let max_attempts = 1000 * n.max(1);
            let mut out = Vec::with_capacity(n);
            let mut attempts = 0;
            while out.len() < n {
                attempts += 1;
                if attempts > max_attempts {
                    return Err(Error::Config(format!(
                        "could not balance sp-determined labels after {max_attempts} draws; \
                         adjust switch_prob or mean_len"
                    )));
                }
                let tokens = sample_tokens(cfg, &lex, &mut rng);
                let tags: Vec<LanguageTag> = tokens.iter().map(|t| t.tag).collect();
                let sentiment = rule.label(&tags).expect("token-dependent rule");
                if cfg.balance {
                    if quota[sentiment.index()] == 0 {
                        continue;
                    }
                    quota[sentiment.index()] -= 1;
                }
                out.push(Sentence {
                    uid: format!("syn{}", out.len()),
                    tokens,
                    sentiment,
                });
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_switch_prob_is_monolingual() {
        let cfg = SynthConfig {
            switch_prob: 0.0,
            label_rule: LabelRule::RandomBalanced,
            sentences: 50,
            ..Default::default()
        };
        for s in generate_synthetic(&cfg, 3).unwrap() {
            assert!(detect_switch_points(&s.tags()).is_empty());
        }
    }

    #[test]
    fn full_switch_prob_alternates() {
        let cfg = SynthConfig {
            switch_prob: 1.0,
            mean_len: 4,
            len_jitter: Some(0),
            label_rule: LabelRule::RandomBalanced,
            sentences: 20,
            ..Default::default()
        };
        for s in generate_synthetic(&cfg, 3).unwrap() {
            assert_eq!(s.len(), 4);
            assert_eq!(detect_switch_points(&s.tags()).len(), 3);
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SynthConfig::default();
        assert_eq!(generate_synthetic(&cfg, 11).unwrap(), generate_synthetic(&cfg, 11).unwrap());
        assert_ne!(generate_synthetic(&cfg, 11).unwrap(), generate_synthetic(&cfg, 12).unwrap());
    }

    #[test]
    fn sp_labels_recomputable_and_balanced() {
        for rule in [LabelRule::SpParity, LabelRule::SpLongestRun] {
            let cfg = SynthConfig {
                sentences: 300,
                other_prob: 0.1,
                label_rule: rule,
                ..Default::default()
            };
            let data = generate_synthetic(&cfg, 5).unwrap();
            for s in &data {
                assert_eq!(rule.label(&s.tags()), Some(s.sentiment));
            }
            for c in Sentiment::ALL {
                assert_eq!(data.iter().filter(|s| s.sentiment == c).count(), 100);
            }
        }
    }

    #[test]
    fn longest_run_examples() {
        use LanguageTag::{En, Hi, Other};
        assert_eq!(longest_run(&[Hi, Hi, En, Hi]), 2);
        assert_eq!(longest_run(&[En; 5]), 5);
        assert_eq!(longest_run(&[Hi, Other, Hi, En]), 3);
        assert_eq!(longest_run(&[]), 0);
        assert_eq!(longest_run_label(&[Hi, En, Hi, En]), Sentiment::Negative);
        assert_eq!(longest_run_label(&[Hi, Hi, Hi, Hi, En]), Sentiment::Neutral);
        assert_eq!(longest_run_label(&[En; 7]), Sentiment::Positive);
    }

    #[test]
    fn invalid_probability() {
        let cfg = SynthConfig {
            switch_prob: 1.5,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn unbalanceable_rule_errors() {
        let cfg = SynthConfig {
            switch_prob: 0.0,
            sentences: 9,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&cfg, 0), Err(Error::Config(_))));
    }
}
