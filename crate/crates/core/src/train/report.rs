use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::write_file;
use crate::corpus::{LanguageTag, Sentence};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::switching::{detect_switch_points, spi, SpiVariant};

fn csv_line(fields: &[String]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(fields)?;
    let bytes = w.into_inner().map_err(|e| Error::Usage(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Usage(e.to_string()))
}

const SP_COLOR: &str = "#c00000";

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grayscale heatmap; rows are queries, columns keys. Tokens at switch
/// points are drawn in red with a red frame around their row and column.
fn heatmap_svg(title: &str, tokens: &[String], weights: &[f64], switch_points: &[usize]) -> String {
    let t = tokens.len();
    let cell = 28;
    let margin = 110;
    let size = margin + cell * t + 20;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{}" font-family="monospace" font-size="11">"#,
        size + 20
    );
    let _ = writeln!(s, r#"<text x="4" y="14">{}</text>"#, escape_xml(title));
    for i in 0..t {
        for j in 0..t {
            let w = weights[i * t + j].clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - w)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},{shade})"><title>{:.4}</title></rect>"#,
                margin + j * cell,
                margin + i * cell,
                w
            );
        }
    }
    for (k, tok) in tokens.iter().enumerate() {
        let sp = switch_points.contains(&k);
        let color = if sp { SP_COLOR } else { "#000000" };
        let label = escape_xml(tok);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" fill="{color}">{label}</text>"#,
            margin - 4,
            margin + k * cell + cell / 2 + 4
        );
        let (x, y) = (margin + k * cell + cell / 2, margin - 4);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})" fill="{color}">{label}</text>"#
        );
        if sp {
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{margin}" width="{cell}" height="{}" fill="none" stroke="{SP_COLOR}" stroke-width="1.5"/>"#,
                margin + k * cell,
                cell * t
            );
            let _ = writeln!(
                s,
                r#"<rect x="{margin}" y="{}" width="{}" height="{cell}" fill="none" stroke="{SP_COLOR}" stroke-width="1.5"/>"#,
                margin + k * cell,
                cell * t
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `attention_l{layer}_h{head}.csv` and `.svg` for every layer and
/// head into `dir`; returns the written paths.
pub fn export_attention(model: &Model, sentence: &Sentence, dir: &Path) -> Result<Vec<PathBuf>> {
    let s = sentence.truncated(model.config.max_len);
    let ex = model.encode(&s)?;
    let weights = model.attention_weights(&ex)?;
    let tokens: Vec<String> = s.tokens.iter().map(|t| t.surface.clone()).collect();
    let sps: Vec<usize> = detect_switch_points(&s.tags()).iter().map(|p| p.position).collect();
    let t = tokens.len();
    let mut written = Vec::new();
    for (l, layer) in weights.iter().enumerate() {
        for (h, w) in layer.iter().enumerate() {
            let mut csv = csv_line(&std::iter::once("query".to_string()).chain(tokens.iter().cloned()).collect::<Vec<_>>())?;
            for (i, tok) in tokens.iter().enumerate() {
                let mut row = vec![tok.clone()];
                row.extend(w.row(i).iter().map(|v| v.to_string()));
                csv.push_str(&csv_line(&row)?);
            }
            let stem = format!("attention_l{l}_h{h}");
            let csv_path = dir.join(format!("{stem}.csv"));
            write_file(&csv_path, csv.as_bytes())?;
            let title = format!("{} layer {l} head {h} ({} tokens)", s.uid, t);
            let svg_path = dir.join(format!("{stem}.svg"));
            write_file(&svg_path, heatmap_svg(&title, &tokens, w.data(), &sps).as_bytes())?;
            written.push(csv_path);
            written.push(svg_path);
        }
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpiRow {
    pub uid: String,
    pub switch_points: Vec<usize>,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpiSummary {
    pub variant: SpiVariant,
    pub sentences: usize,
    pub tokens: usize,
    pub mean_length: f64,
    pub mean_switch_points: f64,
    pub monolingual: usize,
    /// Number of sentences per switch-point count.
    pub switch_point_histogram: BTreeMap<usize, usize>,
    pub hi_to_en: usize,
    pub en_to_hi: usize,
}

pub fn spi_report(sentences: &[Sentence], variant: SpiVariant) -> (Vec<SpiRow>, SpiSummary) {
    let mut rows = Vec::with_capacity(sentences.len());
    let mut hist = BTreeMap::new();
    let (mut tokens, mut total_sp, mut hi_to_en, mut en_to_hi) = (0, 0, 0, 0);
    for s in sentences {
        let tags = s.tags();
        let sps = detect_switch_points(&tags);
        for p in &sps {
            match (p.from, p.to) {
                (LanguageTag::Hi, LanguageTag::En) => hi_to_en += 1,
                (LanguageTag::En, LanguageTag::Hi) => en_to_hi += 1,
                _ => {}
            }
        }
        tokens += s.len();
        total_sp += sps.len();
        *hist.entry(sps.len()).or_insert(0) += 1;
        rows.push(SpiRow {
            uid: s.uid.clone(),
            switch_points: sps.iter().map(|p| p.position).collect(),
            indices: spi(&tags, variant).indices,
        });
    }
    let n = sentences.len().max(1) as f64;
    let summary = SpiSummary {
        variant,
        sentences: sentences.len(),
        tokens,
        mean_length: tokens as f64 / n,
        mean_switch_points: total_sp as f64 / n,
        monolingual: hist.get(&0).copied().unwrap_or(0),
        switch_point_histogram: hist,
        hi_to_en,
        en_to_hi,
    };
    (rows, summary)
}

/// Columns: uid, variant, SPI values and switch point positions, the
/// last two comma-joined inside one quoted field each.
pub fn write_spi_csv(path: &Path, rows: &[SpiRow], variant: SpiVariant) -> Result<()> {
    let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    let variant = variant.as_str().to_string();
    let mut out = csv_line(&["uid".into(), "variant".into(), "spi".into(), "switch_points".into()])?;
    for r in rows {
        out.push_str(&csv_line(&[r.uid.clone(), variant.clone(), join(&r.indices), join(&r.switch_points)])?);
    }
    write_file(path, out.as_bytes())
}
