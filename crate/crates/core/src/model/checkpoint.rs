use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{Model, ModelConfig, Param};
use crate::binio::{read_exact, read_f64s, read_str, read_u32, read_u64, write_f64s, write_str, write_u32, write_u64};
use crate::corpus::{TfIdfModel, Vocab};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"PESTOCKP";
const VERSION: u32 = 1;

/// Layout: magic, version, config JSON, vocab, tf-idf statistics, then
/// `(name, rank, shape, f64 data)` for every parameter.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC).map_err(|e| Error::io(path, e))?;
    write_u32(&mut w, VERSION)?;
    write_str(&mut w, &serde_json::to_string(&model.config)?)?;

    write_u64(&mut w, model.vocab.min_count as u64)?;
    write_u64(&mut w, model.vocab.len() as u64)?;
    for t in model.vocab.tokens() {
        write_str(&mut w, t)?;
    }
    write_u64(&mut w, model.tfidf.n_docs as u64)?;
    write_u64(&mut w, model.tfidf.df.len() as u64)?;
    for &df in &model.tfidf.df {
        write_u64(&mut w, df as u64)?;
    }

    write_u64(&mut w, model.params.len() as u64)?;
    for p in &model.params {
        write_str(&mut w, &p.name)?;
        write_u64(&mut w, p.value.shape().len() as u64)?;
        for &s in p.value.shape() {
            write_u64(&mut w, s as u64)?;
        }
        write_f64s(&mut w, p.value.data())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    if &read_exact::<8>(&mut r)? != MAGIC {
        return Err(Error::Compat(format!("{} is not a model checkpoint", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Compat(format!("unsupported checkpoint version {version}")));
    }
    let config: ModelConfig = serde_json::from_str(&read_str(&mut r)?)?;

    let min_count = read_u64(&mut r)? as usize;
    let n_tokens = read_u64(&mut r)? as usize;
    let tokens = (0..n_tokens).map(|_| read_str(&mut r)).collect::<Result<Vec<_>>>()?;
    let vocab = Vocab::from_tokens(tokens, min_count);
    let n_docs = read_u64(&mut r)? as usize;
    let n_df = read_u64(&mut r)? as usize;
    let df = (0..n_df)
        .map(|_| read_u64(&mut r).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let tfidf = TfIdfModel { n_docs, df };

    let n_params = read_u64(&mut r)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name = read_str(&mut r)?;
        let rank = read_u64(&mut r)? as usize;
        if rank > 4 {
            return Err(Error::Compat(format!("parameter `{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let data = read_f64s(&mut r, shape.iter().product())?;
        params.push(Param {
            name,
            value: Tensor::new(shape, data)?,
            trainable: true,
        });
    }
    Model::from_params(config, vocab, tfidf, params)
}
