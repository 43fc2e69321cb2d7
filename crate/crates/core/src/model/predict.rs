use serde::Serialize;

use super::Model;
use crate::data::{encode, normalize, tokenize, Vocabulary};
use crate::error::Result;
use crate::tensor::Scalar;

const PREDICT_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    /// 1 = sarcastic.
    pub label: usize,
    pub probabilities: Vec<f64>,
}

/// Input that normalizes to no tokens and so cannot be classified.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Unclassifiable {
    pub text: String,
}

/// Row-wise softmax of a logits row, computed in f64.
pub fn softmax_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(p: &[f64]) -> usize {
    // ties go to the lower class index
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Classifies each text. Results are returned in input order; texts with
/// no tokens after normalization come back as `Err(Unclassifiable)`.
pub fn predict<T: Scalar, S: AsRef<str>>(
    model: &Model<T>,
    vocab: &Vocabulary,
    texts: &[S],
) -> Result<Vec<Result<Prediction, Unclassifiable>>> {
    let mut out: Vec<Result<Prediction, Unclassifiable>> = Vec::with_capacity(texts.len());
    let mut pending = Vec::new();
    for (i, text) in texts.iter().enumerate() {
        let tokens = tokenize(&normalize(text.as_ref()));
        if tokens.is_empty() {
            out.push(Err(Unclassifiable {
                text: text.as_ref().to_owned(),
            }));
        } else {
            pending.push((i, encode(&tokens, vocab, model.config.max_len, 0)?));
            out.push(Ok(Prediction {
                label: 0,
                probabilities: Vec::new(),
            }));
        }
    }
    for chunk in pending.chunks(PREDICT_BATCH) {
        let batch: Vec<_> = chunk.iter().map(|(_, e)| e.clone()).collect();
        let logits = model.logits(&batch)?;
        let classes = model.config.num_classes;
        for (row, (i, _)) in chunk.iter().enumerate() {
            let l: Vec<f64> = logits.data()[row * classes..(row + 1) * classes]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            let probabilities = softmax_probs(&l);
            out[*i] = Ok(Prediction {
                label: argmax(&probabilities),
                probabilities,
            });
        }
    }
    Ok(out)
}
