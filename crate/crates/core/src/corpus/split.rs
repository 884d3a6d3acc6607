use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Sentence, Sentiment};
use crate::error::{Error, Result};

/// Deterministic stratified split into (train, dev, test).
pub fn split(
    sentences: &[Sentence],
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<Sentence>, Vec<Sentence>, Vec<Sentence>)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::Config(format!("split fractions out of range: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must sum to 1, got {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for class in Sentiment::ALL {
        let mut group: Vec<&Sentence> = sentences.iter().filter(|s| s.sentiment == class).collect();
        group.shuffle(&mut rng);
        let n = group.len() as f64;
        let n_train = (n * fractions[0]).round() as usize;
        let n_dev = ((n * fractions[1]).round() as usize).min(group.len() - n_train);
        for (i, s) in group.into_iter().enumerate() {
            let dst = if i < n_train {
                &mut train
            } else if i < n_train + n_dev {
                &mut dev
            } else {
                &mut test
            };
            dst.push(s.clone());
        }
    }
    train.shuffle(&mut rng);
    dev.shuffle(&mut rng);
    test.shuffle(&mut rng);
    Ok((train, dev, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguageTag, Token};

    fn balanced(n_per_class: usize) -> Vec<Sentence> {
        (0..3 * n_per_class)
            .map(|i| Sentence {
                uid: i.to_string(),
                tokens: vec![Token::new("w", LanguageTag::Hi)],
                sentiment: Sentiment::ALL[i % 3],
            })
            .collect()
    }

    #[test]
    fn all_to_train() {
        let data = balanced(5);
        let (tr, dv, te) = split(&data, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (15, 0, 0));
    }

    #[test]
    fn stratified_thirds() {
        let data = balanced(30);
        let third = 1.0 / 3.0;
        let (tr, dv, te) = split(&data, [third, third, 1.0 - 2.0 * third], 7).unwrap();
        for part in [&tr, &dv, &te] {
            for c in Sentiment::ALL {
                assert_eq!(part.iter().filter(|s| s.sentiment == c).count(), 10);
            }
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let data = balanced(20);
        let a = split(&data, [0.6, 0.2, 0.2], 3).unwrap();
        let b = split(&data, [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_fractions() {
        assert!(matches!(
            split(&balanced(2), [0.5, 0.2, 0.2], 0),
            Err(Error::Config(_))
        ));
    }
}
