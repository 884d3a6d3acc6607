use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{fit, median, prepare, write_file, write_outcome, Prepared, RunConfig};
use crate::error::{Error, Result};
use crate::positional::PeScheme;

/// One trained (scheme, heads, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationCell {
    pub scheme: PeScheme,
    pub heads: usize,
    pub seed: u64,
    pub weighted_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Seeds aggregated for one (scheme, heads) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub scheme: PeScheme,
    pub label: String,
    pub heads: usize,
    pub sin_cos: bool,
    pub index: bool,
    pub spi: bool,
    pub relative: bool,
    pub runs: usize,
    pub median_weighted_f1: f64,
    pub min_weighted_f1: f64,
    pub max_weighted_f1: f64,
    pub median_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    /// Reference F1 (%) of the matching configuration, for comparison only.
    pub reference_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub cells: Vec<AblationCell>,
}

fn flag(b: bool) -> &'static str {
    if b {
        "x"
    } else {
        "-"
    }
}

impl AblationReport {
    pub fn row(&self, scheme: PeScheme, heads: usize) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.heads == heads)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "scheme,heads,sin_cos,index,spi,relative,runs,median_weighted_f1,min_weighted_f1,max_weighted_f1,\
             median_accuracy,min_accuracy,max_accuracy,reference_f1\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.scheme,
                r.heads,
                r.sin_cos,
                r.index,
                r.spi,
                r.relative,
                r.runs,
                r.median_weighted_f1,
                r.min_weighted_f1,
                r.max_weighted_f1,
                r.median_accuracy,
                r.min_accuracy,
                r.max_accuracy,
                r.reference_f1
            );
        }
        s
    }

    /// Aligned text table: weighted F1 in percent, median [min, max].
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<5} {:<16} {:^7} {:^5} {:^3} {:^8} {:>24} {:>24} {:>9}",
            "heads", "scheme", "Sin/Cos", "Index", "SPI", "Relative", "weighted F1 % [range]", "accuracy % [range]", "reference"
        );
        for r in &self.rows {
            let f1 = format!(
                "{:.2} [{:.2}, {:.2}]",
                100.0 * r.median_weighted_f1,
                100.0 * r.min_weighted_f1,
                100.0 * r.max_weighted_f1
            );
            let acc = format!(
                "{:.2} [{:.2}, {:.2}]",
                100.0 * r.median_accuracy,
                100.0 * r.min_accuracy,
                100.0 * r.max_accuracy
            );
            let _ = writeln!(
                s,
                "{:<5} {:<16} {:^7} {:^5} {:^3} {:^8} {:>24} {:>24} {:>9.2}",
                format!("{}HA", r.heads),
                r.label,
                flag(r.sin_cos),
                flag(r.index),
                flag(r.spi),
                flag(r.relative),
                f1,
                acc,
                r.reference_f1
            );
        }
        s
    }
}

fn cell_config(base: &RunConfig, scheme: PeScheme, heads: usize, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.model.pe_scheme = scheme;
    cfg.model.heads = heads;
    cfg.seed = seed;
    cfg.output_dir = base
        .output_dir
        .join(format!("h{heads}_{}", scheme.name().to_ascii_lowercase()))
        .join(format!("seed{seed}"));
    cfg
}

/// Trains every (heads, scheme, seed) cell. Data and skipgram vectors are
/// prepared once per seed and shared by the cells of that seed. Rows follow
/// the order of `heads` (outer) and `schemes` (inner).
pub fn ablation(base: &RunConfig, schemes: &[PeScheme], heads: &[usize], seeds: &[u64]) -> Result<AblationReport> {
    if schemes.is_empty() || heads.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one scheme, head count and seed".into()));
    }
    let mut plan = Vec::new();
    for &h in heads {
        for &s in schemes {
            let cfg = cell_config(base, s, h, 0);
            cfg.validate()?;
            for &seed in seeds {
                plan.push(cell_config(base, s, h, seed));
            }
        }
    }
    let prep_for = |seed: u64| -> Result<Prepared> {
        let mut cfg = base.clone();
        cfg.seed = seed;
        prepare(&cfg)
    };
    let prepared: Vec<Prepared> = if base.parallel {
        seeds.par_iter().map(|&s| prep_for(s)).collect::<Result<_>>()?
    } else {
        seeds.iter().map(|&s| prep_for(s)).collect::<Result<_>>()?
    };
    let run_cell = |cfg: &RunConfig| -> Result<AblationCell> {
        let pos = seeds.iter().position(|&s| s == cfg.seed).expect("seed from plan");
        let prep = &prepared[pos];
        let out = fit(cfg, prep)?;
        let summary = write_outcome(&cfg.output_dir, cfg, prep, &out)?;
        Ok(AblationCell {
            scheme: cfg.model.pe_scheme,
            heads: cfg.model.heads,
            seed: cfg.seed,
            weighted_f1: summary.metrics.weighted_f1,
            macro_f1: summary.metrics.macro_f1,
            accuracy: summary.metrics.accuracy,
        })
    };
    let cells: Vec<AblationCell> = if base.parallel {
        plan.par_iter().map(run_cell).collect::<Result<_>>()?
    } else {
        plan.iter().map(run_cell).collect::<Result<_>>()?
    };

    let mut rows = Vec::new();
    for &h in heads {
        for &s in schemes {
            let mine: Vec<&AblationCell> = cells.iter().filter(|c| c.scheme == s && c.heads == h).collect();
            let f1: Vec<f64> = mine.iter().map(|c| c.weighted_f1).collect();
            let acc: Vec<f64> = mine.iter().map(|c| c.accuracy).collect();
            let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            rows.push(AblationRow {
                scheme: s,
                label: s.label().to_string(),
                heads: h,
                sin_cos: s.is_sinusoidal(),
                index: s.uses_index(),
                spi: s.uses_spi(),
                relative: s.has_relative(),
                runs: mine.len(),
                median_weighted_f1: median(&f1),
                min_weighted_f1: min(&f1),
                max_weighted_f1: max(&f1),
                median_accuracy: median(&acc),
                min_accuracy: min(&acc),
                max_accuracy: max(&acc),
                reference_f1: s.reference_f1(),
            });
        }
    }
    let report = AblationReport { rows, cells };
    write_file(&base.output_dir.join("ablation.csv"), report.to_csv().as_bytes())?;
    write_file(&base.output_dir.join("ablation.txt"), report.to_table().as_bytes())?;
    write_file(
        &base.output_dir.join("ablation.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    Ok(report)
}
