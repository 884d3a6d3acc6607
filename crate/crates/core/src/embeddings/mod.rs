//! Skipgram word vectors and tf-idf weighted sentence vectors.

mod skipgram;

pub use skipgram::{negative_sampling_loss, train_skipgram, SkipgramConfig, SkipgramPair, SkipgramRun};

use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::binio::{read_exact, read_f64s, read_str, read_u32, read_u64, write_f64s, write_str, write_u32, write_u64};
use crate::corpus::{Sentence, TfIdfModel, Vocab, PAD, UNK};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EMB_MAGIC: &[u8; 8] = b"PESTOEMB";
const EMB_VERSION: u32 = 1;

/// Word vectors: `input` (center) rows are the embeddings used downstream;
/// `output` (context) rows exist only after training.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub input: Tensor,
    pub output: Option<Tensor>,
}

impl EmbeddingMatrix {
    pub fn new(input: Tensor, output: Option<Tensor>) -> Result<Self> {
        if input.shape().len() != 2 {
            return Err(Error::Usage("embedding matrix must be 2-d".into()));
        }
        if let Some(o) = &output {
            if o.shape() != input.shape() {
                return Err(Error::Dimension {
                    op: "embedding",
                    lhs: input.shape().to_vec(),
                    rhs: o.shape().to_vec(),
                });
            }
        }
        Ok(EmbeddingMatrix { input, output })
    }

    pub fn vocab_size(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.input.shape()[1]
    }

    pub fn vector(&self, id: usize) -> &[f64] {
        self.input.row(id)
    }
}

/// `Σ wᵢ·eᵢ / Σ wᵢ` over the rows `ids`; a plain mean when all weights vanish.
pub fn weighted_average(ids: &[usize], weights: &[f64], table: &Tensor) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::Usage("sentence embedding of an empty sentence".into()));
    }
    if ids.len() != weights.len() {
        return Err(Error::Dimension {
            op: "weighted_average",
            lhs: vec![ids.len()],
            rhs: vec![weights.len()],
        });
    }
    let total: f64 = weights.iter().sum();
    let norm: Vec<f64> = if total > 0.0 {
        weights.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / ids.len() as f64; ids.len()]
    };
    let mut out = vec![0.0; table.cols()];
    for (&id, w) in ids.iter().zip(&norm) {
        for (o, v) in out.iter_mut().zip(table.row(id)) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Tf-idf weighted average of the sentence's word vectors.
pub fn sentence_embedding(
    sentence: &Sentence,
    vocab: &Vocab,
    emb: &EmbeddingMatrix,
    tfidf: &TfIdfModel,
) -> Result<Vec<f64>> {
    let ids = vocab.encode(sentence);
    weighted_average(&ids, &tfidf.weights(&ids), &emb.input)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The `k` most cosine-similar vocabulary entries, excluding the query, PAD and UNK.
pub fn nearest_neighbors(
    token: &str,
    vocab: &Vocab,
    emb: &EmbeddingMatrix,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let q = vocab
        .get(token)
        .ok_or_else(|| Error::Lookup(format!("`{token}` is not in the vocabulary")))?;
    let qv = emb.vector(q);
    let mut scored: Vec<(usize, f64)> = (0..emb.vocab_size())
        .filter(|&i| i != q && i != PAD && i != UNK)
        .map(|i| (i, cosine(qv, emb.vector(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (vocab.token(i).unwrap_or_default().to_string(), s))
        .collect())
}

/// Binary layout: magic, version, vocab size, dim, length-prefixed tokens,
/// then the row-major `f64` input matrix (little endian).
pub fn save_embeddings(path: impl AsRef<Path>, vocab: &Vocab, emb: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    if vocab.len() != emb.vocab_size() {
        return Err(Error::Compat(format!(
            "vocab has {} entries, matrix has {} rows",
            vocab.len(),
            emb.vocab_size()
        )));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(EMB_MAGIC).map_err(|e| Error::io(path, e))?;
    write_u32(&mut w, EMB_VERSION)?;
    write_u64(&mut w, vocab.len() as u64)?;
    write_u64(&mut w, emb.dim() as u64)?;
    write_u64(&mut w, vocab.min_count as u64)?;
    for t in vocab.tokens() {
        write_str(&mut w, t)?;
    }
    write_f64s(&mut w, emb.input.data())?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vocab, EmbeddingMatrix)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    if &read_exact::<8>(&mut r)? != EMB_MAGIC {
        return Err(Error::Compat(format!("{} is not an embedding file", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != EMB_VERSION {
        return Err(Error::Compat(format!("unsupported embedding version {version}")));
    }
    let n = read_u64(&mut r)? as usize;
    let dim = read_u64(&mut r)? as usize;
    let min_count = read_u64(&mut r)? as usize;
    let tokens = (0..n).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let data = read_f64s(&mut r, n * dim)?;
    Ok((
        Vocab::from_tokens(tokens, min_count),
        EmbeddingMatrix::new(Tensor::new(vec![n, dim], data)?, None)?,
    ))
}

/// One line per token: surface, then tab-separated vector components.
pub fn export_tsv(path: impl AsRef<Path>, vocab: &Vocab, emb: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (i, t) in vocab.tokens().iter().enumerate() {
        let row: Vec<String> = emb.vector(i).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{t}\t{}", row.join("\t")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
