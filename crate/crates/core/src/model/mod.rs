//! Attention encoder with a CNN sentence head and a tf-idf side channel.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, TfIdfModel, Vocab, PAD};
use crate::embeddings::weighted_average;
use crate::error::{Error, Result};
use crate::positional::{
    add_positions, head_logits, plain_positions, spi_positions, PeScheme, RelativeParams, SinusoidalTable,
};
use crate::switching::{spi, SpiVariant, SpiVector};
use crate::tensor::{Tape, Tensor, Var};

pub const NUM_CLASSES: usize = 3;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Model width; also the word-vector dimension.
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub pe_scheme: PeScheme,
    pub spi_variant: SpiVariant,
    pub rel_clip: usize,
    /// Rows of every θ table and the sinusoidal table.
    pub p_max: usize,
    /// Sentences are truncated to this many tokens.
    pub max_len: usize,
    pub cnn_filters: usize,
    pub cnn_kernel: usize,
    /// `None` means `4 * dim`.
    pub ffn_dim: Option<usize>,
    pub use_layer_norm: bool,
    pub use_ffn: bool,
    pub dropout: f64,
    /// Restrict attention to keys within a window of this width around the query.
    pub local_window: Option<usize>,
    /// Train the word-vector table together with the classifier.
    pub fine_tune_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 120,
            heads: 12,
            layers: 2,
            pe_scheme: PeScheme::SpDynamicRelative,
            spi_variant: SpiVariant::ResetAll,
            rel_clip: 8,
            p_max: 64,
            max_len: 48,
            cnn_filters: 64,
            cnn_kernel: 3,
            ffn_dim: None,
            use_layer_norm: true,
            use_ffn: true,
            dropout: 0.1,
            local_window: None,
            fine_tune_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("rel_clip", self.rel_clip),
            ("p_max", self.p_max),
            ("max_len", self.max_len),
            ("cnn_filters", self.cnn_filters),
            ("cnn_kernel", self.cnn_kernel),
            ("ffn_dim", self.ffn_width()),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be ≥ 1")));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if self.cnn_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("cnn_kernel must be odd, got {}", self.cnn_kernel)));
        }
        if self.pe_scheme.is_sinusoidal() && self.dim % 2 == 1 {
            return Err(Error::Config("sinusoidal encoding needs an even dim".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        let indexed = self.pe_scheme.uses_index() || self.pe_scheme.is_sinusoidal();
        if indexed && self.max_len > self.p_max {
            return Err(Error::Config(format!(
                "max_len {} exceeds p_max {} for position-indexed encodings",
                self.max_len, self.p_max
            )));
        }
        if self.local_window == Some(0) {
            return Err(Error::Config("local_window must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_dim.unwrap_or(4 * self.dim)
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Debug)]
struct LayerSlots {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    theta: Option<usize>,
    rel: Option<usize>,
    ln1: Option<(usize, usize)>,
    ffn: Option<[usize; 4]>,
    ln2: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct Layout {
    embedding: usize,
    layers: Vec<LayerSlots>,
    conv_kernels: usize,
    conv_bias: usize,
    dense_w: usize,
    dense_b: usize,
}

/// Parameter names and shapes in construction order.
fn param_specs(cfg: &ModelConfig, vocab_size: usize) -> (Layout, Vec<(String, Vec<usize>)>) {
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>| {
        specs.push((name, shape));
        specs.len() - 1
    };
    let d = cfg.dim;
    let embedding = push("embedding".into(), vec![vocab_size, d]);
    let mut layers = Vec::new();
    for l in 0..cfg.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        let wq = push(p("wq"), vec![d, d]);
        let wk = push(p("wk"), vec![d, d]);
        let wv = push(p("wv"), vec![d, d]);
        let wo = push(p("wo"), vec![d, d]);
        let theta = cfg.pe_scheme.has_theta(l).then(|| push(p("theta"), vec![cfg.p_max, d]));
        let rel = cfg
            .pe_scheme
            .has_relative()
            .then(|| push(p("rel"), vec![2 * cfg.rel_clip + 1, cfg.head_dim()]));
        let ln1 = cfg
            .use_layer_norm
            .then(|| (push(p("ln1.gain"), vec![d]), push(p("ln1.bias"), vec![d])));
        let ffn = cfg.use_ffn.then(|| {
            let f = cfg.ffn_width();
            [
                push(p("ffn.w1"), vec![d, f]),
                push(p("ffn.b1"), vec![f]),
                push(p("ffn.w2"), vec![f, d]),
                push(p("ffn.b2"), vec![d]),
            ]
        });
        let ln2 = (cfg.use_layer_norm && cfg.use_ffn)
            .then(|| (push(p("ln2.gain"), vec![d]), push(p("ln2.bias"), vec![d])));
        layers.push(LayerSlots {
            wq,
            wk,
            wv,
            wo,
            theta,
            rel,
            ln1,
            ffn,
            ln2,
        });
    }
    let conv_kernels = push("conv.kernels".into(), vec![cfg.cnn_filters, cfg.cnn_kernel, d]);
    let conv_bias = push("conv.bias".into(), vec![cfg.cnn_filters]);
    let dense_w = push("dense.w".into(), vec![cfg.cnn_filters + d, NUM_CLASSES]);
    let dense_b = push("dense.b".into(), vec![NUM_CLASSES]);
    let layout = Layout {
        embedding,
        layers,
        conv_kernels,
        conv_bias,
        dense_w,
        dense_b,
    };
    (layout, specs)
}

/// One sentence ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub ids: Vec<usize>,
    /// Switching-point index per token.
    pub spi: SpiVector,
    /// `false` marks padding.
    pub valid: Vec<bool>,
    /// Tf-idf weighted sentence vector.
    pub sentence_vec: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Right-pads with PAD tokens up to `len`.
    pub fn padded(&self, len: usize) -> Example {
        let mut out = self.clone();
        while out.ids.len() < len {
            out.ids.push(PAD);
            out.spi.indices.push(0);
            out.valid.push(false);
        }
        out
    }

    fn has_padding(&self) -> bool {
        self.valid.iter().any(|v| !v)
    }
}

/// Result of one forward pass on a tape.
pub struct Forward {
    /// `1 × 3` class scores.
    pub logits: Var,
    /// Post-softmax attention weights, `[layer][head]`.
    pub attention: Vec<Vec<Var>>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub tfidf: TfIdfModel,
    pub params: Vec<Param>,
    layout: Layout,
    sinusoidal: Option<SinusoidalTable>,
}

impl Model {
    /// Fresh model around pretrained word vectors (`vocab × dim`).
    pub fn new(config: ModelConfig, vocab: Vocab, tfidf: TfIdfModel, embeddings: Tensor, seed: u64) -> Result<Self> {
        config.validate()?;
        if embeddings.shape() != [vocab.len(), config.dim] {
            return Err(Error::Compat(format!(
                "embedding table {:?} does not fit vocab {} × dim {}",
                embeddings.shape(),
                vocab.len(),
                config.dim
            )));
        }
        let (layout, specs) = param_specs(&config, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (config.dim as f64).sqrt();
        let mut embeddings = Some(embeddings);
        let params = specs
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape))| {
                let value = if i == layout.embedding {
                    embeddings.take().expect("embedding slot is unique")
                } else if name.ends_with("gain") {
                    Tensor::new(shape.clone(), vec![1.0; shape.iter().product()]).expect("shape")
                } else if name.ends_with("theta") || name.ends_with("rel") || shape.len() == 1 {
                    Tensor::zeros(&shape)
                } else {
                    Tensor::uniform(&shape, bound, &mut rng)
                };
                let trainable = i != layout.embedding || config.fine_tune_embeddings;
                Param { name, value, trainable }
            })
            .collect();
        Model::assemble(config, vocab, tfidf, params)
    }

    /// Wraps existing parameters, checking names and shapes against the config.
    pub fn from_params(config: ModelConfig, vocab: Vocab, tfidf: TfIdfModel, params: Vec<Param>) -> Result<Self> {
        config.validate()?;
        let (_, specs) = param_specs(&config, vocab.len());
        if specs.len() != params.len() {
            return Err(Error::Compat(format!(
                "expected {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in specs.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.value.shape() {
                return Err(Error::Compat(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Model::assemble(config, vocab, tfidf, params)
    }

    fn assemble(config: ModelConfig, vocab: Vocab, tfidf: TfIdfModel, mut params: Vec<Param>) -> Result<Self> {
        let (layout, _) = param_specs(&config, vocab.len());
        for (i, p) in params.iter_mut().enumerate() {
            p.trainable = i != layout.embedding || config.fine_tune_embeddings;
        }
        let sinusoidal = if config.pe_scheme.is_sinusoidal() {
            Some(SinusoidalTable::new(config.p_max, config.dim)?)
        } else {
            None
        };
        Ok(Model {
            config,
            vocab,
            tfidf,
            params,
            layout,
            sinusoidal,
        })
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.params[self.layout.embedding].value
    }

    /// Overrides the fixed sinusoidal table (tests).
    pub fn set_sinusoidal_table(&mut self, table: SinusoidalTable) {
        self.sinusoidal = Some(table);
    }

    /// Maps a sentence to network inputs: truncation, ids, SPI, sentence vector.
    pub fn encode(&self, sentence: &Sentence) -> Result<Example> {
        if sentence.is_empty() {
            return Err(Error::Usage(format!("sentence `{}` is empty", sentence.uid)));
        }
        let s = sentence.truncated(self.config.max_len);
        let ids = self.vocab.encode(&s);
        let sentence_vec = weighted_average(&ids, &self.tfidf.weights(&ids), self.embeddings())?;
        Ok(Example {
            spi: spi(&s.tags(), self.config.spi_variant),
            valid: vec![true; ids.len()],
            ids,
            sentence_vec,
            label: s.sentiment.index(),
        })
    }

    /// Puts every parameter on the tape: trainable ones as leaves, the rest as constants.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.param(&p.value)
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Encoder stack; padded rows of the output are zero.
    pub fn encoder(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ex: &Example,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let cfg = &self.config;
        let t = ex.len();
        if t == 0 || !ex.valid.iter().any(|&v| v) {
            return Err(Error::Usage("forward pass on an empty sentence".into()));
        }
        if ex.spi.len() != t || ex.valid.len() != t {
            return Err(Error::Usage("example fields disagree in length".into()));
        }
        let dropout = if dropout_rng.is_some() { cfg.dropout } else { 0.0 };
        let attn_mask = self.attention_mask(ex);
        let row_mask: Option<Vec<f64>> = ex.has_padding().then(|| {
            ex.valid
                .iter()
                .flat_map(|&v| std::iter::repeat_n(if v { 1.0 } else { 0.0 }, cfg.dim))
                .collect()
        });

        let mut x = tape.gather_rows(vars[self.layout.embedding], &ex.ids)?;
        if let Some(table) = &self.sinusoidal {
            let p = table.rows(tape, t)?;
            x = tape.add(x, p)?;
        }
        let mut attention = Vec::with_capacity(cfg.layers);
        for slots in &self.layout.layers {
            if let Some(theta) = slots.theta {
                let idx = if cfg.pe_scheme.uses_spi() {
                    spi_positions(&ex.spi, t, cfg.p_max)?
                } else {
                    plain_positions(t, cfg.p_max)?
                };
                x = add_positions(tape, x, vars[theta], &idx)?;
            }
            let (mixed, weights) = self.attention(tape, vars, slots, x, attn_mask.as_deref(), dropout, &mut dropout_rng)?;
            attention.push(weights);
            let mixed = match &row_mask {
                Some(m) => tape.mul_const(mixed, m.clone())?,
                None => mixed,
            };
            x = tape.add(x, mixed)?;
            if let Some((g, b)) = slots.ln1 {
                x = tape.layer_norm(x, vars[g], vars[b], LN_EPS)?;
            }
            if let Some([w1, b1, w2, b2]) = slots.ffn {
                let h = tape.matmul(x, vars[w1])?;
                let h = tape.add_row(h, vars[b1])?;
                let mut h = tape.relu(h);
                if dropout > 0.0 {
                    h = apply_dropout(tape, h, dropout, dropout_rng.as_deref_mut())?;
                }
                let f = tape.matmul(h, vars[w2])?;
                let f = tape.add_row(f, vars[b2])?;
                x = tape.add(x, f)?;
                if let Some((g, b)) = slots.ln2 {
                    x = tape.layer_norm(x, vars[g], vars[b], LN_EPS)?;
                }
            }
        }
        if let Some(m) = &row_mask {
            x = tape.mul_const(x, m.clone())?;
        }
        Ok((x, attention))
    }

    /// Full forward pass. `dropout_rng` enables dropout (training only).
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        ex: &Example,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let cfg = &self.config;
        let (x, attention) = self.encoder(tape, vars, ex, dropout_rng)?;
        let c = tape.conv1d(x, vars[self.layout.conv_kernels])?;
        let c = tape.add_row(c, vars[self.layout.conv_bias])?;
        let c = tape.relu(c);
        let pooled = tape.max_pool_rows(c, Some(&ex.valid))?;
        let side = tape.constant(Tensor::new(vec![1, cfg.dim], ex.sentence_vec.clone())?);
        let joined = tape.concat_cols(&[pooled, side])?;
        let logits = tape.matmul(joined, vars[self.layout.dense_w])?;
        let logits = tape.add_row(logits, vars[self.layout.dense_b])?;
        Ok(Forward { logits, attention })
    }

    fn attention_mask(&self, ex: &Example) -> Option<Vec<bool>> {
        let t = ex.len();
        let window = self.config.local_window;
        if !ex.has_padding() && window.is_none() {
            return None;
        }
        let half = window.map(|w| w / 2);
        Some(
            (0..t)
                .flat_map(|i| {
                    (0..t).map(move |j| {
                        // padded queries are zeroed later; any valid key keeps their row finite
                        ex.valid[j] && (!ex.valid[i] || half.is_none_or(|h| i.abs_diff(j) <= h))
                    })
                })
                .collect(),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        slots: &LayerSlots,
        x: Var,
        mask: Option<&[bool]>,
        dropout: f64,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Var>)> {
        let dh = self.config.head_dim();
        let q = tape.matmul(x, vars[slots.wq])?;
        let k = tape.matmul(x, vars[slots.wk])?;
        let v = tape.matmul(x, vars[slots.wv])?;
        let rel = slots.rel.map(|r| RelativeParams {
            table: vars[r],
            clip: self.config.rel_clip,
        });
        let mut outs = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let logits = head_logits(tape, qh, kh, rel)?;
            let w = tape.softmax_rows(logits, mask)?;
            weights.push(w);
            let w = if dropout > 0.0 {
                apply_dropout(tape, w, dropout, rng.as_deref_mut())?
            } else {
                w
            };
            outs.push(tape.matmul(w, vh)?);
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        Ok((tape.matmul(joined, vars[slots.wo])?, weights))
    }

    /// Class probabilities for one example (no dropout).
    pub fn predict_example(&self, ex: &Example) -> Result<[f64; NUM_CLASSES]> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let out = self.forward(&mut tape, &vars, ex, None)?;
        Ok(softmax3(tape.value(out.logits).data()))
    }

    pub fn classify(&self, sentence: &Sentence) -> Result<[f64; NUM_CLASSES]> {
        self.predict_example(&self.encode(sentence)?)
    }

    /// Attention weights `[layer][head]` as `T × T` tensors.
    pub fn attention_weights(&self, ex: &Example) -> Result<Vec<Vec<Tensor>>> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let out = self.forward(&mut tape, &vars, ex, None)?;
        Ok(out
            .attention
            .iter()
            .map(|layer| layer.iter().map(|&w| tape.value(w).clone()).collect())
            .collect())
    }

    /// Encoder output `T × D` before the sentence head.
    pub fn encoder_output(&self, ex: &Example) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind_constants(&mut tape);
        let (x, _) = self.encoder(&mut tape, &vars, ex, None)?;
        Ok(tape.value(x).clone())
    }

    fn bind_constants(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.constant(p.value.clone())).collect()
    }

    /// Mean cross-entropy over `batch` and the gradient of every parameter
    /// (zeros for frozen ones). The PAD embedding row never receives gradient.
    pub fn loss_and_grads(&self, batch: &[Example], dropout_rng: Option<&mut ChaCha8Rng>) -> Result<(f64, Vec<Vec<f64>>)> {
        if batch.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let mut rng = dropout_rng;
        let mut rows = Vec::with_capacity(batch.len());
        for ex in batch {
            rows.push(self.forward(&mut tape, &vars, ex, rng.as_deref_mut())?.logits);
        }
        let logits = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let loss = tape.cross_entropy(logits, &labels)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        tape.backward(loss)?;
        let mut grads: Vec<Vec<f64>> = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                tape.grad(v)
                    .map(|g| g.to_vec())
                    .unwrap_or_else(|| vec![0.0; p.value.numel()])
            })
            .collect();
        let d = self.config.dim;
        grads[self.layout.embedding][PAD * d..(PAD + 1) * d].fill(0.0);
        Ok((value, grads))
    }
}

fn apply_dropout(tape: &mut Tape, x: Var, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    let keep = 1.0 / (1.0 - p);
    let n = tape.value(x).numel();
    let mask = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
    tape.mul_const(x, mask)
}

pub fn softmax3(logits: &[f64]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    [e[0] / s, e[1] / s, e[2] / s]
}
