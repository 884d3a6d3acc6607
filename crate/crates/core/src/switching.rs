//! Switching points and switching-point indices (SPI).
//!
//! A switching point sits on the second token of a bigram whose languages
//! differ. The SPI restarts counting at 0 on reset points: every switching
//! point for [`SpiVariant::ResetAll`], only Hindi→English shifts for
//! [`SpiVariant::BaseMixed`] (Hindi is the base language).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::LanguageTag;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpiVariant {
    ResetAll,
    BaseMixed,
}

impl SpiVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            SpiVariant::ResetAll => "reset_all",
            SpiVariant::BaseMixed => "base_mixed",
        }
    }
}

impl fmt::Display for SpiVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpiVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reset_all" => Ok(SpiVariant::ResetAll),
            "base_mixed" => Ok(SpiVariant::BaseMixed),
            other => Err(Error::Config(format!(
                "unknown spi variant `{other}` (expected reset_all or base_mixed)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SwitchPoint {
    /// Index of the first token in the new language; always ≥ 1.
    pub position: usize,
    pub from: LanguageTag,
    pub to: LanguageTag,
}

impl SwitchPoint {
    pub fn direction(&self) -> String {
        format!("{}->{}", self.from, self.to)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpiVector {
    pub indices: Vec<usize>,
    pub variant: SpiVariant,
}

impl SpiVector {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Resolves OTHER tags: each inherits the nearest preceding language tag,
/// leading OTHERs take the first language tag, and an all-OTHER sequence
/// falls back to Hindi.
pub fn effective_tags(tags: &[LanguageTag]) -> Result<Vec<LanguageTag>> {
    if tags.is_empty() {
        return Err(Error::Usage("effective_tags of an empty sequence".into()));
    }
    let first = tags
        .iter()
        .copied()
        .find(|&t| t != LanguageTag::Other)
        .unwrap_or(LanguageTag::Hi);
    let mut current = first;
    Ok(tags
        .iter()
        .map(|&t| {
            if t != LanguageTag::Other {
                current = t;
            }
            current
        })
        .collect())
}

pub fn detect_switch_points(tags: &[LanguageTag]) -> Vec<SwitchPoint> {
    let Ok(eff) = effective_tags(tags) else {
        return Vec::new();
    };
    eff.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, w)| SwitchPoint {
            position: i + 1,
            from: w[0],
            to: w[1],
        })
        .collect()
}

/// The index function `S(l)` over a tag sequence.
pub fn spi(tags: &[LanguageTag], variant: SpiVariant) -> SpiVector {
    let eff = effective_tags(tags).unwrap_or_default();
    let mut indices = Vec::with_capacity(eff.len());
    for i in 0..eff.len() {
        let reset = i == 0
            || match variant {
                SpiVariant::ResetAll => eff[i - 1] != eff[i],
                SpiVariant::BaseMixed => eff[i - 1] == LanguageTag::Hi && eff[i] == LanguageTag::En,
            };
        indices.push(if reset { 0 } else { indices[i - 1] + 1 });
    }
    SpiVector { indices, variant }
}

/// Bounds every index to `p_max - 1`.
pub fn clamp_spi(v: &SpiVector, p_max: usize) -> SpiVector {
    let cap = p_max.max(1) - 1;
    SpiVector {
        indices: v.indices.iter().map(|&i| i.min(cap)).collect(),
        variant: v.variant,
    }
}
