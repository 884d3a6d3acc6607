//! Two-stage training (skipgram, then classifier), evaluation, ablation
//! grids and inspection reports.

mod ablation;
mod config;
mod metrics;
mod report;

pub use ablation::{ablation, AblationCell, AblationReport, AblationRow};
pub use config::RunConfig;
pub use metrics::{compute_metrics, ClassMetrics, MetricsReport};
pub use report::{export_attention, spi_report, write_spi_csv, SpiRow, SpiSummary};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{build_vocab, generate_synthetic, parse_corpus, split, Sentence, TfIdfModel, Vocab};
use crate::embeddings::train_skipgram;
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Example, Model};
use crate::tensor::{Adam, Tensor};

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

/// Reads the configured corpus files, or generates the synthetic corpus,
/// and splits when no explicit dev/test files are given.
pub fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let data = match &cfg.train_path {
        Some(p) => {
            let all = parse_corpus(p)?;
            if cfg.dev_path.is_none() && cfg.test_path.is_none() {
                let (train, dev, test) = split(&all, cfg.split, cfg.data_seed)?;
                Dataset { train, dev, test }
            } else {
                Dataset {
                    train: all,
                    dev: cfg.dev_path.as_ref().map(parse_corpus).transpose()?.unwrap_or_default(),
                    test: cfg.test_path.as_ref().map(parse_corpus).transpose()?.unwrap_or_default(),
                }
            }
        }
        None => {
            let all = generate_synthetic(&cfg.synth, cfg.data_seed)?;
            let (train, dev, test) = split(&all, cfg.split, cfg.data_seed)?;
            Dataset { train, dev, test }
        }
    };
    if data.train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    Ok(data)
}

/// Data plus the stage-one artifacts shared by every classifier trained on it.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: Dataset,
    pub vocab: Vocab,
    pub tfidf: TfIdfModel,
    pub embeddings: Tensor,
    pub skipgram_losses: Vec<f64>,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let vocab = build_vocab(&data.train, cfg.min_count);
    let tfidf = TfIdfModel::fit_sentences(&data.train, &vocab);
    let docs: Vec<Vec<usize>> = data.train.iter().map(|s| vocab.encode(s)).collect();
    let run = train_skipgram(&docs, vocab.len(), &cfg.skipgram(), cfg.seed)?;
    Ok(Prepared {
        data,
        vocab,
        tfidf,
        embeddings: run.embeddings.input,
        skipgram_losses: run.epoch_losses,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_accuracy: Option<f64>,
    pub dev_weighted_f1: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch,train_loss,dev_loss,dev_accuracy,dev_weighted_f1";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for e in log {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            e.train_loss,
            opt(e.dev_loss),
            opt(e.dev_accuracy),
            opt(e.dev_weighted_f1)
        ));
    }
    s
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch (the last epoch without a dev set).
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Predictions and mean cross-entropy over `examples`.
pub fn predict(model: &Model, examples: &[Example]) -> Result<(Vec<usize>, f64)> {
    let mut preds = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for ex in examples {
        let p = model.predict_example(ex)?;
        loss -= p[ex.label].max(f64::MIN_POSITIVE).ln();
        preds.push(argmax(&p));
    }
    Ok((preds, loss / examples.len().max(1) as f64))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

fn encode_all(model: &Model, sentences: &[Sentence]) -> Result<Vec<Example>> {
    sentences.iter().map(|s| model.encode(s)).collect()
}

/// Stage two: trains the classifier on prepared data.
pub fn fit(cfg: &RunConfig, prep: &Prepared) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::new(
        cfg.model.clone(),
        prep.vocab.clone(),
        prep.tfidf.clone(),
        prep.embeddings.clone(),
        cfg.seed,
    )?;
    let mut adam = Adam::new(cfg.adam(), model.params.iter().map(|p| p.value.numel()));
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));

    let mut train = encode_all(&model, &prep.data.train)?;
    let mut dev = encode_all(&model, &prep.data.dev)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=cfg.epochs {
        if cfg.model.fine_tune_embeddings && epoch > 1 {
            train = encode_all(&model, &prep.data.train)?;
            dev = encode_all(&model, &prep.data.dev)?;
        }
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = model.loss_and_grads(&batch, Some(&mut dropout_rng))?;
            total += loss * batch.len() as f64;
            for (i, (p, g)) in model.params.iter_mut().zip(&grads).enumerate() {
                if p.trainable {
                    adam.step(i, &p.name, p.value.data_mut(), g)?;
                }
            }
        }
        let train_loss = total / train.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        let mut entry = EpochLog {
            epoch,
            train_loss,
            dev_loss: None,
            dev_accuracy: None,
            dev_weighted_f1: None,
        };
        if !dev.is_empty() {
            let (preds, loss) = predict(&model, &dev)?;
            let labels: Vec<usize> = dev.iter().map(|e| e.label).collect();
            let m = compute_metrics(&labels, &preds)?;
            entry.dev_loss = Some(loss);
            entry.dev_accuracy = Some(m.accuracy);
            entry.dev_weighted_f1 = Some(m.weighted_f1);
            if best.as_ref().is_none_or(|(f, _, _)| m.weighted_f1 > *f) {
                best = Some((m.weighted_f1, epoch, model.clone()));
            }
        }
        log.push(entry);
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, cfg.epochs),
    };
    Ok(TrainOutcome { model, log, best_epoch })
}

/// Metrics of `model` on labelled sentences.
pub fn evaluate(model: &Model, sentences: &[Sentence]) -> Result<MetricsReport> {
    if model.embeddings().rows() != model.vocab.len() {
        return Err(Error::Compat(format!(
            "checkpoint vocab has {} entries but the embedding table {} rows",
            model.vocab.len(),
            model.embeddings().rows()
        )));
    }
    if sentences.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let examples = encode_all(model, sentences)?;
    let (preds, _) = predict(model, &examples)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    compute_metrics(&labels, &preds)
}

/// Class probabilities for every sentence.
pub fn probabilities(model: &Model, sentences: &[Sentence]) -> Result<Vec<[f64; 3]>> {
    sentences.iter().map(|s| model.classify(s)).collect()
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents).map_err(|e| Error::io(path, e))
}

/// Writes metrics as JSON and as a text table.
pub fn write_metrics(dir: &Path, stem: &str, m: &MetricsReport) -> Result<()> {
    write_file(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(m)?.as_bytes())?;
    write_file(&dir.join(format!("{stem}.txt")), m.to_table().as_bytes())
}

/// Files produced by [`run_train`].
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub metrics: MetricsReport,
    /// Which split the metrics were computed on.
    pub evaluated_on: &'static str,
    pub best_epoch: usize,
}

/// Writes the outputs of a finished training run into `dir`.
pub(crate) fn write_outcome(dir: &Path, cfg: &RunConfig, prep: &Prepared, out: &TrainOutcome) -> Result<RunSummary> {
    write_file(&dir.join("config.json"), cfg.to_json()?.as_bytes())?;
    write_file(&dir.join("train_log.csv"), log_csv(&out.log).as_bytes())?;
    save_checkpoint(dir.join("checkpoint.bin"), &out.model)?;
    let (set, name) = if !prep.data.test.is_empty() {
        (&prep.data.test, "test")
    } else if !prep.data.dev.is_empty() {
        (&prep.data.dev, "dev")
    } else {
        (&prep.data.train, "train")
    };
    let metrics = evaluate(&out.model, set)?;
    write_metrics(dir, "metrics", &metrics)?;
    Ok(RunSummary {
        output_dir: dir.to_path_buf(),
        metrics,
        evaluated_on: name,
        best_epoch: out.best_epoch,
    })
}

/// Full run: data, skipgram, classifier, checkpoint, log and metrics under
/// `cfg.output_dir`.
pub fn run_train(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("config.json"), cfg.to_json()?.as_bytes())?;
    let prep = prepare(cfg)?;
    let out = fit(cfg, &prep)?;
    write_outcome(dir, cfg, &prep, &out)
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
