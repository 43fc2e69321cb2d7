use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square confusion matrix, `counts[actual][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    /// Binary matrix with class 1 as the positive class.
    pub fn from_binary(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self {
            counts: vec![vec![tn, fp], vec![fn_, tp]],
        }
    }

    pub fn from_pairs(classes: usize, actual: &[usize], predicted: &[usize]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::Contract(format!(
                "{} labels but {} predictions",
                actual.len(),
                predicted.len()
            )));
        }
        let mut c = Self::new(classes);
        for (&a, &p) in actual.iter().zip(predicted) {
            if a >= classes || p >= classes {
                return Err(Error::Contract(format!("class index outside 0..{classes}")));
            }
            c.counts[a][p] += 1;
        }
        Ok(c)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.classes()).map(|k| self.counts[k][k]).sum()
    }

    fn predicted(&self, k: usize) -> usize {
        self.counts.iter().map(|row| row[k]).sum()
    }

    fn actual(&self, k: usize) -> usize {
        self.counts[k].iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 per class. Empty denominators give 0, so a
/// class never predicted and never present has F1 = 0.
pub fn per_class(c: &Confusion) -> Vec<ClassMetrics> {
    (0..c.classes())
        .map(|k| {
            let tp = c.counts[k][k];
            let precision = ratio(tp, c.predicted(k));
            let recall = ratio(tp, c.actual(k));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: c.actual(k),
            }
        })
        .collect()
}

/// Unweighted mean of the per-class F1 scores.
pub fn macro_f1(c: &Confusion) -> Result<f64> {
    if c.total() == 0 || c.classes() == 0 {
        return Err(Error::Contract("macro-F1 of an empty confusion matrix".into()));
    }
    let scores = per_class(c);
    Ok(scores.iter().map(|m| m.f1).sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Confusion,
    pub examples: usize,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Confusion) -> Result<Self> {
        let macro_f1 = macro_f1(&confusion)?;
        Ok(Self {
            accuracy: ratio(confusion.correct(), confusion.total()),
            macro_f1,
            per_class: per_class(&confusion),
            examples: confusion.total(),
            confusion,
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples   {}", self.examples)?;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "macro-F1   {:.4}", self.macro_f1)?;
        writeln!(f, "class  precision  recall  f1      support")?;
        for (k, m) in self.per_class.iter().enumerate() {
            writeln!(
                f,
                "{k:<5}  {:<9.4}  {:<6.4}  {:<6.4}  {}",
                m.precision, m.recall, m.f1, m.support
            )?;
        }
        write!(f, "confusion (rows actual, columns predicted): {:?}", self.confusion.counts)
    }
}
