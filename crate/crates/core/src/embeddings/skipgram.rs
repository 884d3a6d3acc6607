use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::tensor::{adam_update, AdamConfig, AdamState, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipgramConfig {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Pairs per Adam step.
    pub batch_size: usize,
    /// Frequent-word subsampling threshold; `None` disables it.
    pub subsample: Option<f64>,
    pub dim: usize,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            window: 3,
            negatives: 5,
            epochs: 5,
            lr: 0.01,
            batch_size: 256,
            subsample: None,
            dim: 120,
        }
    }
}

impl SkipgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.negatives == 0 {
            return Err(Error::Config("skipgram window and negatives must be ≥ 1".into()));
        }
        if self.dim == 0 || self.batch_size == 0 {
            return Err(Error::Config("skipgram dim and batch_size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One positive (center, context) pair with its sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkipgramPair {
    pub center: usize,
    pub context: usize,
    pub negatives: Vec<usize>,
}

/// Mean binary-logistic negative-sampling loss over `batch`, with its exact
/// gradients w.r.t. the input (center) and output (context) matrices.
pub fn negative_sampling_loss(
    input: &[f64],
    output: &[f64],
    dim: usize,
    batch: &[SkipgramPair],
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut g_in = vec![0.0; input.len()];
    let mut g_out = vec![0.0; output.len()];
    if batch.is_empty() {
        return (0.0, g_in, g_out);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let row = |i: usize| i * dim..(i + 1) * dim;
    for p in batch {
        let v = &input[row(p.center)];
        let terms = std::iter::once((p.context, 1.0)).chain(p.negatives.iter().map(|&n| (n, -1.0)));
        for (word, sign) in terms {
            let u = &output[row(word)];
            let score: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            // -log σ(sign·score) and its derivative w.r.t. score.
            let z = sign * score;
            loss += softplus(-z);
            let d = -sign * sigmoid(-z) * scale;
            let (ci, wo) = (row(p.center), row(word));
            for k in 0..dim {
                g_in[ci.start + k] += d * output[wo.start + k];
                g_out[wo.start + k] += d * input[ci.start + k];
            }
        }
    }
    (loss * scale, g_in, g_out)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Trained embeddings and the mean loss of every epoch.
#[derive(Clone, Debug)]
pub struct SkipgramRun {
    pub embeddings: EmbeddingMatrix,
    pub epoch_losses: Vec<f64>,
}

pub(crate) struct PairSampler {
    negative_dist: WeightedIndex<f64>,
    keep_prob: Vec<f64>,
    window: usize,
    negatives: usize,
}

impl PairSampler {
    pub(crate) fn new(corpus: &[Vec<usize>], vocab_size: usize, cfg: &SkipgramConfig) -> Result<Self> {
        let mut counts = vec![0usize; vocab_size];
        for &id in corpus.iter().flatten() {
            if id >= vocab_size {
                return Err(Error::Lookup(format!("token id {id} outside vocabulary of {vocab_size}")));
            }
            counts[id] += 1;
        }
        counts[PAD] = 0;
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Data("skipgram corpus has no tokens".into()));
        }
        let negative_dist = WeightedIndex::new(counts.iter().map(|&c| (c as f64).powf(0.75)))
            .map_err(|e| Error::Data(format!("negative distribution: {e}")))?;
        let keep_prob = counts
            .iter()
            .map(|&c| match cfg.subsample {
                Some(t) if c > 0 => {
                    let f = c as f64 / total as f64;
                    ((t / f).sqrt() + t / f).min(1.0)
                }
                _ => 1.0,
            })
            .collect();
        Ok(PairSampler {
            negative_dist,
            keep_prob,
            window: cfg.window,
            negatives: cfg.negatives,
        })
    }

    pub(crate) fn epoch_pairs<R: Rng>(&self, corpus: &[Vec<usize>], rng: &mut R) -> Vec<SkipgramPair> {
        let mut pairs = Vec::new();
        for sent in corpus {
            let kept: Vec<usize> = sent
                .iter()
                .copied()
                .filter(|&id| id != PAD && (self.keep_prob[id] >= 1.0 || rng.gen::<f64>() < self.keep_prob[id]))
                .collect();
            for (i, &center) in kept.iter().enumerate() {
                let lo = i.saturating_sub(self.window);
                let hi = (i + self.window).min(kept.len() - 1);
                for (j, &context) in kept.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let negatives = (0..self.negatives).map(|_| self.negative_dist.sample(rng)).collect();
                    pairs.push(SkipgramPair {
                        center,
                        context,
                        negatives,
                    });
                }
            }
        }
        pairs.shuffle(rng);
        pairs
    }
}

/// Trains skipgram embeddings with negative sampling and Adam.
///
/// `corpus` holds id-mapped sentences. The PAD row stays at zero.
pub fn train_skipgram(
    corpus: &[Vec<usize>],
    vocab_size: usize,
    cfg: &SkipgramConfig,
    seed: u64,
) -> Result<SkipgramRun> {
    cfg.validate()?;
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::Data("skipgram corpus is empty".into()));
    }
    let sampler = PairSampler::new(corpus, vocab_size, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = cfg.dim;
    let bound = 0.5 / dim as f64;
    let mut input = Tensor::uniform(&[vocab_size, dim], bound, &mut rng);
    input.data_mut()[PAD * dim..(PAD + 1) * dim].fill(0.0);
    let mut output = Tensor::zeros(&[vocab_size, dim]);

    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut st_in = AdamState::new(input.numel());
    let mut st_out = AdamState::new(output.numel());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        let pairs = sampler.epoch_pairs(corpus, &mut rng);
        let mut total = 0.0;
        for batch in pairs.chunks(cfg.batch_size) {
            let (loss, mut g_in, g_out) = negative_sampling_loss(input.data(), output.data(), dim, batch);
            g_in[PAD * dim..(PAD + 1) * dim].fill(0.0);
            total += loss * batch.len() as f64;
            adam_update("skipgram.input", input.data_mut(), &g_in, &mut st_in, &adam)?;
            adam_update("skipgram.output", output.data_mut(), &g_out, &mut st_out, &adam)?;
        }
        let mean = if pairs.is_empty() { 0.0 } else { total / pairs.len() as f64 };
        if !mean.is_finite() {
            return Err(Error::NonFinite("skipgram loss".into()));
        }
        epoch_losses.push(mean);
    }

    Ok(SkipgramRun {
        embeddings: EmbeddingMatrix::new(input, Some(output))?,
        epoch_losses,
    })
}
