//! Attention-logit kernels for the positional-encoding schemes.
//!
//! Every scheme decomposes into two primitives:
//!
//! * an absolute term added to the layer input before the query/key
//!   projections: fixed sinusoidal rows, or rows of a learnable θ table
//!   looked up by plain position or by switching-point index;
//! * an optional key-side relative term `q_i · a[clip(j - i)]`.
//!
//! The scaled logit for one head is
//! `((x_i + p_i) W_Q) · ((x_j + p_j) W_K + a_{j-i})ᵀ / √d_head`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::switching::{clamp_spi, SpiVector};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PeScheme {
    /// Fixed sin/cos vectors added to the first layer input.
    #[serde(alias = "sinusoidal")]
    Sinusoidal,
    /// Learned θ(i) by plain position, first layer only.
    #[serde(alias = "dynamic")]
    Dynamic,
    /// Learned per-layer relative key embeddings.
    #[serde(alias = "relative")]
    Relative,
    /// Learned θ(S(l_i)) by switching-point index, first layer only.
    #[serde(alias = "sp_dynamic")]
    SpDynamic,
    /// θ(S(l_i)) plus relative key embeddings at every layer (PESTO).
    #[serde(alias = "sp_dynamic_relative", alias = "pesto", alias = "PESTO")]
    SpDynamicRelative,
    /// θ(i) plus relative key embeddings at every layer.
    #[serde(alias = "dynamic_relative")]
    DynamicRelative,
}

impl PeScheme {
    pub const ALL: [PeScheme; 6] = [
        PeScheme::Sinusoidal,
        PeScheme::Dynamic,
        PeScheme::Relative,
        PeScheme::DynamicRelative,
        PeScheme::SpDynamic,
        PeScheme::SpDynamicRelative,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PeScheme::Sinusoidal => "SINUSOIDAL",
            PeScheme::Dynamic => "DYNAMIC",
            PeScheme::Relative => "RELATIVE",
            PeScheme::SpDynamic => "SP_DYNAMIC",
            PeScheme::SpDynamicRelative => "SP_DYNAMIC_RELATIVE",
            PeScheme::DynamicRelative => "DYNAMIC_RELATIVE",
        }
    }

    /// Display label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            PeScheme::Sinusoidal => "Sinusoidal PE",
            PeScheme::Dynamic => "Dynamic PE",
            PeScheme::Relative => "RPE",
            PeScheme::SpDynamic => "SPDPE",
            PeScheme::SpDynamicRelative => "PESTO (SPDRPE)",
            PeScheme::DynamicRelative => "Dynamic PE+RPE",
        }
    }

    pub fn uses_spi(self) -> bool {
        matches!(self, PeScheme::SpDynamic | PeScheme::SpDynamicRelative)
    }

    pub fn has_relative(self) -> bool {
        matches!(
            self,
            PeScheme::Relative | PeScheme::SpDynamicRelative | PeScheme::DynamicRelative
        )
    }

    pub fn is_sinusoidal(self) -> bool {
        self == PeScheme::Sinusoidal
    }

    /// Whether layer `layer` (0-based) owns a learnable θ table.
    pub fn has_theta(self, layer: usize) -> bool {
        match self {
            PeScheme::Dynamic | PeScheme::SpDynamic => layer == 0,
            PeScheme::SpDynamicRelative | PeScheme::DynamicRelative => true,
            PeScheme::Sinusoidal | PeScheme::Relative => false,
        }
    }

    /// Index-by-position column of the comparison table.
    pub fn uses_index(self) -> bool {
        matches!(self, PeScheme::Dynamic | PeScheme::DynamicRelative)
    }

    /// Reference F1 (%) of the matching configuration, for comparison only.
    pub fn reference_f1(self) -> f64 {
        match self {
            PeScheme::Sinusoidal => 65.0,
            PeScheme::Dynamic => 69.7,
            PeScheme::DynamicRelative => 73.0,
            PeScheme::Relative => 73.4,
            PeScheme::SpDynamic => 73.52,
            PeScheme::SpDynamicRelative => 75.56,
        }
    }
}

impl fmt::Display for PeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        match norm.as_str() {
            "PESTO" | "SPDRPE" => return Ok(PeScheme::SpDynamicRelative),
            "SPDPE" => return Ok(PeScheme::SpDynamic),
            "RPE" => return Ok(PeScheme::Relative),
            _ => {}
        }
        PeScheme::ALL
            .into_iter()
            .find(|p| p.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown pe_scheme `{s}`")))
    }
}

/// `p[i][2t] = sin(i / 10000^(2t/D))`, `p[i][2t+1] = cos(i / 10000^(2t/D))`.
pub fn sinusoidal_pe(position: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 == 1 {
        return Err(Error::Config(format!("sinusoidal encoding needs an even dimension, got {dim}")));
    }
    let mut out = vec![0.0; dim];
    for t in 0..dim / 2 {
        let angle = position as f64 / 10000f64.powf(2.0 * t as f64 / dim as f64);
        out[2 * t] = angle.sin();
        out[2 * t + 1] = angle.cos();
    }
    Ok(out)
}

/// Fixed `p_max × dim` sinusoidal table.
#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidalTable {
    table: Tensor,
}

impl SinusoidalTable {
    pub fn new(p_max: usize, dim: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(p_max * dim);
        for i in 0..p_max {
            data.extend(sinusoidal_pe(i, dim)?);
        }
        Ok(SinusoidalTable {
            table: Tensor::new(vec![p_max, dim], data)?,
        })
    }

    /// Overrides the table, e.g. to zero it in tests.
    pub fn from_tensor(table: Tensor) -> Self {
        SinusoidalTable { table }
    }

    pub fn p_max(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.table
    }

    /// First `t` rows as a tape constant.
    pub fn rows(&self, tape: &mut Tape, t: usize) -> Result<Var> {
        if t > self.p_max() {
            return Err(Error::Length { len: t, cap: self.p_max() });
        }
        let d = self.dim();
        let data = self.table.data()[..t * d].to_vec();
        Ok(tape.constant(Tensor::new(vec![t, d], data)?))
    }
}

/// Query and key projections of one head, each `D × d_head`.
#[derive(Clone, Copy, Debug)]
pub struct HeadWeights {
    pub wq: Var,
    pub wk: Var,
}

/// Key-side relative table `(2·clip + 1) × d_head`.
#[derive(Clone, Copy, Debug)]
pub struct RelativeParams {
    pub table: Var,
    pub clip: usize,
}

/// Positions `0..t` for θ lookup; errors when they do not fit the table.
pub fn plain_positions(t: usize, p_max: usize) -> Result<Vec<usize>> {
    if t > p_max {
        return Err(Error::Length { len: t, cap: p_max });
    }
    Ok((0..t).collect())
}

/// SPI values clamped to the table height.
pub fn spi_positions(spi: &SpiVector, t: usize, p_max: usize) -> Result<Vec<usize>> {
    if spi.len() != t {
        return Err(Error::Usage(format!(
            "SPI vector has {} entries for a sequence of {t}",
            spi.len()
        )));
    }
    Ok(clamp_spi(spi, p_max).indices)
}

/// `x + table[idx]`, row by row.
pub fn add_positions(tape: &mut Tape, x: Var, table: Var, idx: &[usize]) -> Result<Var> {
    let rows = tape.gather_rows(table, idx)?;
    tape.add(x, rows)
}

/// Scaled logits of one head from projected queries and keys.
pub fn head_logits(tape: &mut Tape, q: Var, k: Var, rel: Option<RelativeParams>) -> Result<Var> {
    let d_head = tape.value(q).cols();
    let mut logits = tape.matmul_nt(q, k)?;
    if let Some(r) = rel {
        let extra = tape.relative_logits(q, r.table, r.clip)?;
        logits = tape.add(logits, extra)?;
    }
    Ok(tape.scale(logits, 1.0 / (d_head as f64).sqrt()))
}

fn project(tape: &mut Tape, x: Var, head: &HeadWeights, rel: Option<RelativeParams>) -> Result<Var> {
    let q = tape.matmul(x, head.wq)?;
    let k = tape.matmul(x, head.wk)?;
    head_logits(tape, q, k, rel)
}

fn seq_len(tape: &Tape, x: Var) -> usize {
    tape.value(x).shape()[0]
}

/// Fixed sinusoidal absolute encoding.
pub fn logits_sinusoidal(tape: &mut Tape, w: Var, table: &SinusoidalTable, head: &HeadWeights) -> Result<Var> {
    let t = seq_len(tape, w);
    let p = table.rows(tape, t)?;
    let x = tape.add(w, p)?;
    project(tape, x, head, None)
}

/// Learned θ(i) by plain position.
pub fn logits_dynamic(tape: &mut Tape, w: Var, theta: Var, head: &HeadWeights) -> Result<Var> {
    let t = seq_len(tape, w);
    let idx = plain_positions(t, tape.value(theta).shape()[0])?;
    let x = add_positions(tape, w, theta, &idx)?;
    project(tape, x, head, None)
}

/// Relative key embeddings on the layer input.
pub fn logits_relative(tape: &mut Tape, x: Var, rel: RelativeParams, head: &HeadWeights) -> Result<Var> {
    project(tape, x, head, Some(rel))
}

/// Learned θ indexed by switching-point index.
pub fn logits_spdpe(
    tape: &mut Tape,
    w: Var,
    spi: &SpiVector,
    theta: Var,
    head: &HeadWeights,
) -> Result<Var> {
    let t = seq_len(tape, w);
    let idx = spi_positions(spi, t, tape.value(theta).shape()[0])?;
    let x = add_positions(tape, w, theta, &idx)?;
    project(tape, x, head, None)
}

/// Switching-point θ plus relative key embeddings (PESTO).
pub fn logits_pesto(
    tape: &mut Tape,
    x: Var,
    spi: &SpiVector,
    theta: Var,
    rel: RelativeParams,
    head: &HeadWeights,
) -> Result<Var> {
    let t = seq_len(tape, x);
    let idx = spi_positions(spi, t, tape.value(theta).shape()[0])?;
    let xin = add_positions(tape, x, theta, &idx)?;
    project(tape, xin, head, Some(rel))
}

/// Plain-position θ plus relative key embeddings.
pub fn logits_dynamic_relative(
    tape: &mut Tape,
    x: Var,
    theta: Var,
    rel: RelativeParams,
    head: &HeadWeights,
) -> Result<Var> {
    let t = seq_len(tape, x);
    let idx = plain_positions(t, tape.value(theta).shape()[0])?;
    let xin = add_positions(tape, x, theta, &idx)?;
    project(tape, xin, head, Some(rel))
}

/// Everything a single-head kernel may need.
#[derive(Clone, Copy, Debug)]
pub struct KernelInputs<'a> {
    pub head: HeadWeights,
    pub theta: Option<Var>,
    pub relative: Option<RelativeParams>,
    pub sinusoidal: Option<&'a SinusoidalTable>,
    pub spi: Option<&'a SpiVector>,
}

/// Dispatches to the kernel of `scheme`.
pub fn attention_logits(tape: &mut Tape, scheme: PeScheme, x: Var, p: &KernelInputs<'_>) -> Result<Var> {
    let need = |what: &str| Error::Usage(format!("{scheme} kernel needs {what}"));
    let theta = || p.theta.ok_or_else(|| need("a theta table"));
    let rel = || p.relative.ok_or_else(|| need("a relative table"));
    let spi = || p.spi.ok_or_else(|| need("an SPI vector"));
    match scheme {
        PeScheme::Sinusoidal => {
            let table = p.sinusoidal.ok_or_else(|| need("a sinusoidal table"))?;
            logits_sinusoidal(tape, x, table, &p.head)
        }
        PeScheme::Dynamic => logits_dynamic(tape, x, theta()?, &p.head),
        PeScheme::Relative => logits_relative(tape, x, rel()?, &p.head),
        PeScheme::SpDynamic => logits_spdpe(tape, x, spi()?, theta()?, &p.head),
        PeScheme::SpDynamicRelative => logits_pesto(tape, x, spi()?, theta()?, rel()?, &p.head),
        PeScheme::DynamicRelative => logits_dynamic_relative(tape, x, theta()?, rel()?, &p.head),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_scores() {
        let got: Vec<f64> = PeScheme::ALL.iter().map(|s| s.reference_f1()).collect();
        // Sinusoidal, dynamic, relative, dynamic+relative, SPDPE, PESTO
        assert_eq!(got, [65.0, 69.7, 73.4, 73.0, 73.52, 75.56]);
    }

    #[test]
    fn sinusoid_values() {
        let p0 = sinusoidal_pe(0, 6).unwrap();
        assert_eq!(p0, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let p1 = sinusoidal_pe(1, 4).unwrap();
        assert!((p1[0] - 0.841_470_984_807_896_5).abs() < 1e-12);
        assert!((p1[1] - 0.540_302_305_868_139_8).abs() < 1e-12);
        assert!((p1[2] - 0.009_999_833_334_166_664).abs() < 1e-12);
        assert!((p1[3] - 0.999_950_000_416_665_3).abs() < 1e-12);
        assert!(matches!(sinusoidal_pe(1, 5), Err(Error::Config(_))));
    }

    #[test]
    fn sinusoid_table_rows_distinct_and_bounded() {
        let t = SinusoidalTable::new(64, 16).unwrap();
        assert!(t.tensor().data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..64 {
            for j in 0..i {
                assert_ne!(t.tensor().row(i), t.tensor().row(j));
            }
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in PeScheme::ALL {
            assert_eq!(s.name().parse::<PeScheme>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<PeScheme>(&json).unwrap(), s);
        }
        assert_eq!("pesto".parse::<PeScheme>().unwrap(), PeScheme::SpDynamicRelative);
        assert_eq!(
            serde_json::from_str::<PeScheme>("\"sp_dynamic\"").unwrap(),
            PeScheme::SpDynamic
        );
        assert!("rotary".parse::<PeScheme>().is_err());
    }

    #[test]
    fn theta_placement() {
        assert!(PeScheme::Dynamic.has_theta(0) && !PeScheme::Dynamic.has_theta(1));
        assert!(PeScheme::SpDynamicRelative.has_theta(1));
        assert!(!PeScheme::Relative.has_theta(0));
    }
}
