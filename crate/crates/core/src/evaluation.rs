//! Accuracy, macro precision/recall and learning curves.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `C x C` counts; row = gold class, column = predicted class.
pub type Confusion = Vec<Vec<u64>>;

pub fn confusion_matrix(predicted: &[usize], gold: &[usize], n_classes: usize) -> Result<Confusion> {
    if predicted.len() != gold.len() {
        return Err(Error::LengthMismatch(predicted.len(), gold.len()));
    }
    if predicted.is_empty() {
        return Err(Error::EmptyEval);
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &g) in predicted.iter().zip(gold) {
        for index in [p, g] {
            if index >= n_classes {
                return Err(Error::IndexOutOfRange { index, classes: n_classes });
            }
        }
        m[g][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
}

/// Macro-averaged over all classes; a class whose denominator is zero scores
/// zero and still counts toward the mean.
pub fn metrics_from_confusion(m: &Confusion) -> Result<Scores> {
    let c = m.len();
    let total: u64 = m.iter().flatten().sum();
    if c == 0 || total == 0 {
        return Err(Error::EmptyEval);
    }
    let trace: u64 = (0..c).map(|i| m[i][i]).sum();
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut precision = 0.0;
    let mut recall = 0.0;
    for k in 0..c {
        let row: u64 = m[k].iter().sum();
        let col: u64 = m.iter().map(|r| r[k]).sum();
        precision += ratio(m[k][k], col);
        recall += ratio(m[k][k], row);
    }
    Ok(Scores {
        accuracy: trace as f64 / total as f64,
        precision_macro: precision / c as f64,
        recall_macro: recall / c as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub n_labels: usize,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub confusion: Confusion,
    pub eval_size: usize,
}

impl RoundMetrics {
    pub fn evaluate(n_labels: usize, predicted: &[usize], gold: &[usize], n_classes: usize) -> Result<Self> {
        let confusion = confusion_matrix(predicted, gold, n_classes)?;
        let s = metrics_from_confusion(&confusion)?;
        Ok(Self {
            n_labels,
            accuracy: s.accuracy,
            precision_macro: s.precision_macro,
            recall_macro: s.recall_macro,
            confusion,
            eval_size: predicted.len(),
        })
    }

    pub fn scores(&self) -> Scores {
        Scores {
            accuracy: self.accuracy,
            precision_macro: self.precision_macro,
            recall_macro: self.recall_macro,
        }
    }
}

pub const CURVE_CSV_HEADER: &str = "n_labels,accuracy,precision_macro,recall_macro";

/// Per-round metrics with strictly increasing `n_labels`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LearningCurve {
    rounds: Vec<RoundMetrics>,
}

impl LearningCurve {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, m: RoundMetrics) -> Result<()> {
        if let Some(last) = self.rounds.last() {
            if m.n_labels <= last.n_labels {
                return Err(Error::InvalidConfig(format!(
                    "curve point at {} labels does not follow {}",
                    m.n_labels, last.n_labels
                )));
            }
        }
        self.rounds.push(m);
        Ok(())
    }

    pub fn rounds(&self) -> &[RoundMetrics] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn last(&self) -> Option<&RoundMetrics> {
        self.rounds.last()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CURVE_CSV_HEADER}")?;
        for r in &self.rounds {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.6}",
                r.n_labels, r.accuracy, r.precision_macro, r.recall_macro
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Per-round confusion matrices as JSON.
    pub fn confusion_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.rounds
                .iter()
                .map(|r| serde_json::json!({ "n_labels": r.n_labels, "confusion": r.confusion }))
                .collect(),
        )
    }
}
