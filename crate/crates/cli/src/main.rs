use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pesto::corpus::{generate_synthetic, normalize_tag, parse_corpus, save_corpus, Sentence, Sentiment, Token};
use pesto::model::load_checkpoint;
use pesto::switching::SpiVariant;
use pesto::train::{
    ablation, evaluate, export_attention, load_data, run_train, spi_report, write_metrics, write_spi_csv, RunConfig,
};
use pesto::{Error, Result};

#[derive(Parser)]
#[command(name = "pesto", version, about = "Switching-point aware positional encodings for code-mixed text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat JSON run config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; the value is parsed as JSON, else taken as a string.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train skipgram embeddings and the classifier; writes checkpoint, log and metrics.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate a checkpoint on a labelled corpus.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus to score; defaults to the config's test split.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory for eval_metrics.json/.txt; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every (heads, scheme, seed) cell and write the comparison table.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Per-sentence switching-point indices and corpus statistics.
    Spi {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus to annotate; defaults to the configured training data.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// reset_all or base_mixed; defaults to the config's spi_variant.
        #[arg(long)]
        variant: Option<SpiVariant>,
        /// CSV destination; defaults to <output_dir>/spi.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export per-layer, per-head attention weights as CSV and SVG.
    Attn {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Inline sentence of word_TAG tokens, e.g. "aap_HI se_HI request_EN".
        #[arg(long, conflicts_with = "uid")]
        sentence: Option<String>,
        /// Sentence id to look up in --corpus.
        #[arg(long, requires = "corpus")]
        uid: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the configured synthetic corpus in the tagged corpus format.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string(v).expect("json value"));
}

fn inline_sentence(text: &str) -> Result<Sentence> {
    let tokens = text
        .split_whitespace()
        .map(|w| match w.rsplit_once('_') {
            Some((surface, tag)) if !surface.is_empty() => Ok(Token::new(surface, normalize_tag(tag))),
            _ => Err(Error::Usage(format!("token `{w}` is not word_TAG"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if tokens.is_empty() {
        return Err(Error::Usage("empty sentence".into()));
    }
    Ok(Sentence {
        uid: "inline".into(),
        tokens,
        sentiment: Sentiment::Neutral,
    })
}

fn eval_set(cfg: &RunConfig, corpus: Option<&Path>) -> Result<Vec<Sentence>> {
    if let Some(p) = corpus {
        return parse_corpus(p);
    }
    let data = load_data(cfg)?;
    Ok([data.test, data.dev, data.train].into_iter().find(|s| !s.is_empty()).unwrap_or_default())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg } => {
            let cfg = cfg.load()?;
            let s = run_train(&cfg)?;
            eprint!("{}", s.metrics.to_table());
            print_json(&json!({
                "output_dir": s.output_dir,
                "evaluated_on": s.evaluated_on,
                "best_epoch": s.best_epoch,
                "accuracy": s.metrics.accuracy,
                "macro_f1": s.metrics.macro_f1,
                "weighted_f1": s.metrics.weighted_f1,
            }));
        }
        Command::Eval {
            cfg,
            checkpoint,
            corpus,
            out,
        } => {
            let cfg = cfg.load()?;
            let model = load_checkpoint(&checkpoint)?;
            let sentences = eval_set(&cfg, corpus.as_deref())?;
            let m = evaluate(&model, &sentences)?;
            let dir = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
            write_metrics(&dir, "eval_metrics", &m)?;
            eprint!("{}", m.to_table());
            print_json(&serde_json::to_value(&m)?);
        }
        Command::Ablate { cfg } => {
            let cfg = cfg.load()?;
            let report = ablation(&cfg, &cfg.ablation_schemes, &cfg.ablation_heads, &cfg.ablation_seeds)?;
            eprint!("{}", report.to_table());
            print_json(&json!({ "output_dir": cfg.output_dir, "rows": report.rows }));
        }
        Command::Spi {
            cfg,
            corpus,
            variant,
            out,
        } => {
            let cfg = cfg.load()?;
            let sentences = match &corpus {
                Some(p) => parse_corpus(p)?,
                None => {
                    let d = load_data(&cfg)?;
                    [d.train, d.dev, d.test].concat()
                }
            };
            let variant = variant.unwrap_or(cfg.model.spi_variant);
            let (rows, summary) = spi_report(&sentences, variant);
            let path = out.unwrap_or_else(|| cfg.output_dir.join("spi.csv"));
            write_spi_csv(&path, &rows, variant)?;
            print_json(&json!({ "csv": path, "summary": summary }));
        }
        Command::Attn {
            cfg,
            checkpoint,
            sentence,
            uid,
            corpus,
            out,
        } => {
            cfg.load()?;
            let model = load_checkpoint(&checkpoint)?;
            let s = match (sentence, uid, corpus) {
                (Some(text), _, _) => inline_sentence(&text)?,
                (None, Some(uid), Some(p)) => parse_corpus(&p)?
                    .into_iter()
                    .find(|s| s.uid == uid)
                    .ok_or_else(|| Error::Lookup(format!("no sentence with uid `{uid}` in {}", p.display())))?,
                _ => return Err(Error::Usage("attn needs --sentence or --uid with --corpus".into())),
            };
            let files = export_attention(&model, &s, &out)?;
            print_json(&json!({ "files": files }));
        }
        Command::Synth { cfg, out } => {
            let cfg = cfg.load()?;
            let sentences = generate_synthetic(&cfg.synth, cfg.data_seed)?;
            save_corpus(&out, &sentences)?;
            print_json(&json!({ "path": out, "sentences": sentences.len() }));
        }
    }
    Ok(())
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim()),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
