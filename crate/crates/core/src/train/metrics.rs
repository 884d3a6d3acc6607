use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::Sentiment;
use crate::error::{Error, Result};
use crate::model::NUM_CLASSES;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    /// Classes with no gold examples; their F1 is reported as 0.
    pub unsupported: Vec<String>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(labels: &[usize], predictions: &[usize]) -> Result<MetricsReport> {
    if labels.len() != predictions.len() {
        return Err(Error::Usage(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("metrics over an empty set".into()));
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(Error::Data(format!("class index out of range: label {y}, prediction {p}")));
        }
        confusion[y][p] += 1;
    }
    let n = labels.len();
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    let mut unsupported = Vec::new();
    for (c, class) in Sentiment::ALL.iter().enumerate() {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        if support == 0 {
            unsupported.push(class.as_str().to_string());
        }
        per_class.push(ClassMetrics {
            class: class.as_str().to_string(),
            precision,
            recall,
            f1: if support == 0 { 0.0 } else { f1 },
            support,
            predicted,
        });
    }
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_CLASSES as f64;
    let weighted_f1 = per_class.iter().map(|m| m.f1 * m.support as f64).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        n,
        accuracy: ratio(correct, n),
        macro_f1,
        weighted_f1,
        per_class,
        confusion,
        unsupported,
    })
}

impl MetricsReport {
    /// Human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for m in &self.per_class {
            let _ = writeln!(
                s,
                "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}",
                m.class, m.precision, m.recall, m.f1, m.support
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "accuracy     {:.4}", self.accuracy);
        let _ = writeln!(s, "macro F1     {:.4}", self.macro_f1);
        let _ = writeln!(s, "weighted F1  {:.4}", self.weighted_f1);
        let _ = writeln!(s, "n            {}", self.n);
        let _ = writeln!(s);
        let _ = writeln!(s, "confusion (rows = true, cols = predicted)");
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9}", "", "negative", "neutral", "positive");
        for (c, row) in self.confusion.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<10} {:>9} {:>9} {:>9}",
                Sentiment::ALL[c].as_str(),
                row[0],
                row[1],
                row[2]
            );
        }
        for u in &self.unsupported {
            let _ = writeln!(s, "warning: class `{u}` has no gold examples; its F1 is reported as 0");
        }
        s
    }
}
