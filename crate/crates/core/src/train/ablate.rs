use serde::{Deserialize, Serialize};

use super::{evaluate_raw, split_validation, train_prepared, MetricsReport, RunConfig};
use crate::data::{EmbeddingSource, RawExample, Vocabulary};
use crate::error::Result;

/// Which modules one ablation row keeps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_cnn: bool,
    pub use_gru: bool,
    pub use_lstm: bool,
    pub use_attention: bool,
    pub use_pretrained: bool,
}

impl AblationRow {
    fn new(name: &str, flags: [bool; 5]) -> Self {
        let [use_cnn, use_gru, use_lstm, use_attention, use_pretrained] = flags;
        Self {
            name: name.to_owned(),
            use_cnn,
            use_gru,
            use_lstm,
            use_attention,
            use_pretrained,
        }
    }

    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.model.use_cnn = self.use_cnn;
        cfg.model.use_gru = self.use_gru;
        cfg.model.use_lstm = self.use_lstm;
        cfg.model.use_attention = self.use_attention;
        cfg.use_pretrained = self.use_pretrained;
        cfg
    }
}

/// The five cumulative configurations, from LSTM alone up to the full model.
pub fn cumulative_rows() -> Vec<AblationRow> {
    vec![
        AblationRow::new("LSTM", [false, false, true, false, false]),
        AblationRow::new("LSTM+GRU", [false, true, true, false, false]),
        AblationRow::new("LSTM+GRU+MultiAttention(4)", [false, true, true, true, false]),
        AblationRow::new("LSTM+GRU+MultiAttention(4)+Pre", [false, true, true, true, true]),
        AblationRow::new("LSTM+GRU+CNN+MultiAttention(4)+Pre", [true, true, true, true, true]),
    ]
}

/// Single-module baselines. CNN alone has no sequence encoder and is
/// reported as skipped.
pub fn baseline_rows() -> Vec<AblationRow> {
    vec![
        AblationRow::new("CNN", [true, false, false, false, true]),
        AblationRow::new("GRU", [false, true, false, false, true]),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum AblationStatus {
    Ok { report: MetricsReport, best_epoch: usize },
    Skipped { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub row: AblationRow,
    #[serde(flatten)]
    pub status: AblationStatus,
}

impl AblationResult {
    pub fn report(&self) -> Option<&MetricsReport> {
        match &self.status {
            AblationStatus::Ok { report, .. } => Some(report),
            AblationStatus::Skipped { .. } => None,
        }
    }
}

/// Trains and evaluates every row with the base seed. The validation split
/// and vocabulary are shared by all rows.
pub fn ablate(
    base: &RunConfig,
    rows: &[AblationRow],
    train: &[RawExample],
    test: &[RawExample],
    embeddings: Option<&EmbeddingSource>,
) -> Result<Vec<AblationResult>> {
    let (train_part, val_part) = split_validation(base, train);
    let vocab = Vocabulary::build(&train_part)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let cfg = row.apply(base);
        let mut problem = cfg.validate().err().map(|e| e.to_string());
        if problem.is_none() && cfg.use_pretrained && embeddings.is_none() {
            problem = Some("row needs pre-trained embeddings but none were supplied".into());
        }
        if let Some(reason) = problem {
            log::warn!("skipping ablation row {}: {reason}", row.name);
            out.push(AblationResult {
                row: row.clone(),
                status: AblationStatus::Skipped { reason },
            });
            continue;
        }
        log::info!("ablation row {}", row.name);
        let outcome = train_prepared(&cfg, vocab.clone(), &train_part, &val_part, embeddings)?;
        let (report, _) = evaluate_raw(&outcome.model, &outcome.vocab, test, cfg.batch_size)?;
        out.push(AblationResult {
            row: row.clone(),
            status: AblationStatus::Ok {
                report,
                best_epoch: outcome.best_epoch,
            },
        });
    }
    Ok(out)
}

pub fn ablation_jsonl(results: &[AblationResult]) -> String {
    results
        .iter()
        .map(|r| serde_json::to_string(r).expect("result serializes") + "\n")
        .collect()
}

pub fn ablation_table(results: &[AblationResult]) -> String {
    let width = results.iter().map(|r| r.row.name.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$}  {:>8}  {:>8}\n", "model", "accuracy", "macro-F1");
    for r in results {
        match &r.status {
            AblationStatus::Ok { report, .. } => s.push_str(&format!(
                "{:<width$}  {:>8.4}  {:>8.4}\n",
                r.row.name, report.accuracy, report.macro_f1
            )),
            AblationStatus::Skipped { reason } => {
                s.push_str(&format!("{:<width$}  skipped: {reason}\n", r.row.name))
            }
        }
    }
    s
}
