use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::SynthConfig;
use crate::embeddings::SkipgramConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::positional::PeScheme;
use crate::tensor::AdamConfig;

/// Everything a run needs, as one flat JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    /// Generator settings, used when `train_path` is absent.
    #[serde(flatten)]
    pub synth: SynthConfig,

    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Train/dev/test fractions applied when dev and test files are not given.
    pub split: [f64; 3],
    /// Seed of the synthetic corpus and of the split.
    pub data_seed: u64,
    /// Seed of embeddings, initialization, shuffling and dropout.
    pub seed: u64,
    pub output_dir: PathBuf,

    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub min_count: usize,

    pub sg_window: usize,
    pub sg_negatives: usize,
    pub sg_epochs: usize,
    pub sg_lr: f64,
    pub sg_batch_size: usize,
    pub sg_subsample: Option<f64>,

    pub ablation_schemes: Vec<PeScheme>,
    pub ablation_heads: Vec<usize>,
    pub ablation_seeds: Vec<u64>,
    /// Run ablation cells on the rayon pool.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sg = SkipgramConfig::default();
        RunConfig {
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
            train_path: None,
            dev_path: None,
            test_path: None,
            split: [0.8, 0.1, 0.1],
            data_seed: 0,
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            lr: 1e-3,
            batch_size: 32,
            epochs: 20,
            min_count: 1,
            sg_window: sg.window,
            sg_negatives: sg.negatives,
            sg_epochs: sg.epochs,
            sg_lr: sg.lr,
            sg_batch_size: sg.batch_size,
            sg_subsample: sg.subsample,
            ablation_schemes: vec![
                PeScheme::Sinusoidal,
                PeScheme::Dynamic,
                PeScheme::Relative,
                PeScheme::DynamicRelative,
                PeScheme::SpDynamic,
                PeScheme::SpDynamicRelative,
            ],
            ablation_heads: vec![3, 12],
            ablation_seeds: vec![0, 1, 2],
            parallel: false,
        }
    }
}

fn known_keys() -> BTreeSet<String> {
    match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

/// `"12"` → number, `"true"` → bool, `"[1,2]"` → array, anything else → string.
fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Builds a config from an optional JSON file plus `key=value` overrides.
    /// Unknown keys are rejected.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut map = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                match serde_json::from_str::<Value>(&text)? {
                    Value::Object(m) => m,
                    _ => return Err(Error::Config(format!("{} must hold a JSON object", p.display()))),
                }
            }
            None => Map::new(),
        };
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            map.insert(k.trim().to_string(), parse_override_value(v.trim()));
        }
        Self::from_map(map)
    }

    pub fn from_map(map: Map<String, Value>) -> Result<Self> {
        let known = known_keys();
        let unknown: Vec<&String> = map.keys().filter(|k| !known.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown config keys: {unknown:?}")));
        }
        let cfg: RunConfig =
            serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.skipgram().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    pub fn skipgram(&self) -> SkipgramConfig {
        SkipgramConfig {
            window: self.sg_window,
            negatives: self.sg_negatives,
            epochs: self.sg_epochs,
            lr: self.sg_lr,
            batch_size: self.sg_batch_size,
            subsample: self.sg_subsample,
            dim: self.model.dim,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    /// Pretty JSON of the resolved config.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn default_dim_supports_both_head_counts() {
        RunConfig::default().validate().unwrap();
        for h in [3, 12] {
            RunConfig::load(None, &[format!("heads={h}")]).unwrap();
        }
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::load(
            None,
            &[
                "dim=16".into(),
                "heads=4".into(),
                "pe_scheme=SP_DYNAMIC".into(),
                "train_path=data/x.txt".into(),
                "ffn_dim=null".into(),
                "split=[0.5,0.25,0.25]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.model.dim, 16);
        assert_eq!(cfg.model.pe_scheme, PeScheme::SpDynamic);
        assert_eq!(cfg.train_path, Some(PathBuf::from("data/x.txt")));
        assert_eq!(cfg.split, [0.5, 0.25, 0.25]);
    }

    #[test]
    fn unknown_and_invalid_keys_are_config_errors() {
        assert!(matches!(RunConfig::load(None, &["dimm=3".into()]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["heads=7".into()]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["noequals".into()]), Err(Error::Config(_))));
        assert!(matches!(RunConfig::load(None, &["dim=abc".into()]), Err(Error::Config(_))));
    }
}
