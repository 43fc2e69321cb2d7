use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Confusion, MetricsReport, RunConfig};
use crate::data::{
    batch_iter, encode_all, init_embeddings, load_dataset, stratified_split, EmbeddingSource, EncodedExample,
    RawExample, Vocabulary, REFERENCE_TEST_COUNTS, REFERENCE_TRAIN_COUNTS,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::optim::{adam_step, AdamState, EarlyStopState, StopDecision};
use crate::tensor::Scalar;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    /// This epoch produced the kept checkpoint so far.
    pub best: bool,
}

impl EpochRecord {
    pub fn text(&self) -> String {
        let mut s = format!("epoch {:>3}  train_loss {:.6}", self.epoch, self.train_loss);
        if let (Some(l), Some(a)) = (self.val_loss, self.val_accuracy) {
            write!(s, "  val_loss {l:.6}  val_acc {a:.4}").unwrap();
        }
        if self.best {
            s.push_str("  *");
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Weights with the best validation loss (final weights when there is
    /// no early stopping).
    pub model: Model<f32>,
    pub adam: AdamState,
    pub vocab: Vocabulary,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub skipped_examples: usize,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| r.text() + "\n").collect()
    }
}

/// Splits off the stratified validation set (empty when `val_fraction` is 0).
pub fn split_validation(cfg: &RunConfig, examples: &[RawExample]) -> (Vec<RawExample>, Vec<RawExample>) {
    if cfg.val_fraction == 0.0 {
        return (examples.to_vec(), Vec::new());
    }
    stratified_split(examples, |e| e.label, cfg.val_fraction, cfg.seed)
}

/// Mean cross-entropy and metrics of `model` over `examples`.
pub fn evaluate_encoded<T: Scalar>(
    model: &Model<T>,
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<(MetricsReport, f64)> {
    if examples.is_empty() {
        return Err(Error::Contract("nothing to evaluate".into()));
    }
    let classes = model.config.num_classes;
    let mut predicted = Vec::with_capacity(examples.len());
    let mut loss = 0.0;
    for batch in examples.chunks(batch_size.max(1)) {
        let logits = model.logits(batch)?;
        for (row, ex) in batch.iter().enumerate() {
            let l: Vec<f64> = logits.data()[row * classes..(row + 1) * classes]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - l[ex.label];
            let mut best = 0;
            for k in 1..classes {
                if l[k] > l[best] {
                    best = k;
                }
            }
            predicted.push(best);
        }
    }
    let actual: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let report = MetricsReport::from_confusion(Confusion::from_pairs(classes, &actual, &predicted)?)?;
    Ok((report, loss / examples.len() as f64))
}

/// Trains on already split data. `embeddings` is used when
/// `cfg.use_pretrained` is set and must then be present.
pub fn train_prepared(
    cfg: &RunConfig,
    vocab: Vocabulary,
    train: &[RawExample],
    val: &[RawExample],
    embeddings: Option<&EmbeddingSource>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.vocab_size = vocab.len();
    model_cfg.seed = cfg.seed;
    let mut model = Model::<f32>::build(model_cfg)?;
    if cfg.use_pretrained {
        let source = embeddings
            .ok_or_else(|| Error::Config("use_pretrained is set but no embeddings were supplied".into()))?;
        let (table, coverage) = init_embeddings(&vocab, source, model.config.embed_dim, cfg.seed)?;
        log::info!(
            "pre-trained vectors for {}/{} tokens ({:.1}%)",
            coverage.found,
            coverage.total,
            100.0 * coverage.ratio()
        );
        model.set_embeddings(table)?;
    }

    let max_len = model.config.max_len;
    let (train_enc, skipped_train) = encode_all(train, &vocab, max_len)?;
    let (val_enc, skipped_val) = encode_all(val, &vocab, max_len)?;
    if train_enc.is_empty() {
        return Err(Error::Data("no usable training examples".into()));
    }
    log::info!(
        "training on {} examples, validating on {}, {} parameters",
        train_enc.len(),
        val_enc.len(),
        model.num_parameters()
    );

    let mut adam = AdamState::default();
    let mut stop = EarlyStopState::new(cfg.patience);
    let mut best: Option<(Model<f32>, AdamState, usize)> = None;
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        for (b, batch) in batch_iter(&train_enc, cfg.batch_size, true, cfg.seed, epoch as u64).enumerate() {
            let loss = model.compute_gradients(&batch)? as f64;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {loss} at epoch {epoch}, batch {b} (learning rate {})",
                    cfg.adam.lr
                )));
            }
            adam_step(&mut model, &mut adam, &cfg.adam)?;
            total += loss * batch.len() as f64;
        }
        model.zero_grad();
        let train_loss = total / train_enc.len() as f64;

        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_loss: None,
            val_accuracy: None,
            best: false,
        };
        let mut decision = StopDecision::Continue;
        if !val_enc.is_empty() {
            let (report, val_loss) = evaluate_encoded(&model, &val_enc, cfg.batch_size)?;
            if !val_loss.is_finite() {
                return Err(Error::Numeric(format!("validation loss became {val_loss} at epoch {epoch}")));
            }
            record.val_loss = Some(val_loss);
            record.val_accuracy = Some(report.accuracy);
            if cfg.early_stopping {
                decision = stop.update(val_loss);
                if stop.improved() {
                    record.best = true;
                    best = Some((model.clone(), adam.clone(), epoch));
                }
            }
        }
        log::info!("{}", record.text());
        log.push(record);
        if decision == StopDecision::Stop {
            stopped_early = true;
            log::info!("no validation improvement for {} epochs, stopping", cfg.patience);
            break;
        }
    }

    let (model, adam, best_epoch) = match best {
        Some(b) => b,
        None => {
            let last = log.len();
            if let Some(r) = log.last_mut() {
                r.best = true;
            }
            (model, adam, last)
        }
    };
    Ok(TrainOutcome {
        model,
        adam,
        vocab,
        log,
        best_epoch,
        stopped_early,
        skipped_examples: skipped_train + skipped_val,
    })
}

/// Splits, builds the vocabulary from the training portion and trains.
pub fn train_in_memory(
    cfg: &RunConfig,
    examples: &[RawExample],
    embeddings: Option<&EmbeddingSource>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train, val) = split_validation(cfg, examples);
    let vocab = Vocabulary::build(&train)?;
    train_prepared(cfg, vocab, &train, &val, embeddings)
}

/// Metrics of a trained model on raw examples; headlines with no tokens
/// are skipped (and counted).
pub fn evaluate_raw(
    model: &Model<f32>,
    vocab: &Vocabulary,
    examples: &[RawExample],
    batch_size: usize,
) -> Result<(MetricsReport, usize)> {
    let (encoded, skipped) = encode_all(examples, vocab, model.config.max_len)?;
    let (report, _) = evaluate_encoded(model, &encoded, batch_size)?;
    Ok((report, skipped))
}

/// Files written by [`train`].
#[derive(Clone, Debug)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub vocab: PathBuf,
    pub log_jsonl: PathBuf,
    pub log_text: PathBuf,
    pub config: PathBuf,
    pub test_metrics: Option<PathBuf>,
}

pub fn load_embeddings_for(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Option<EmbeddingSource>> {
    if !cfg.use_pretrained {
        return Ok(None);
    }
    let path = cfg
        .embeddings
        .as_deref()
        .ok_or_else(|| Error::Config("use_pretrained needs an embeddings file (or disable pre-training)".into()))?;
    Ok(Some(EmbeddingSource::load(path, cfg.model.embed_dim, Some(vocab))?))
}

pub fn load_split(path: Option<&Path>, which: &str) -> Result<Vec<RawExample>> {
    let path = path.ok_or_else(|| Error::Config(format!("no {which} dataset given")))?;
    let ds = load_dataset(path, None)?;
    let expected = if which == "test" { REFERENCE_TEST_COUNTS } else { REFERENCE_TRAIN_COUNTS };
    if let Some(w) = ds.stats.mismatch(&expected, which) {
        log::warn!("{w}");
    }
    log::info!(
        "{which}: {} ({:.2} tokens per headline)",
        ds.stats.counts,
        ds.stats.mean_tokens
    );
    Ok(ds.examples)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Full file-based run: load, train, write checkpoint/vocabulary/logs into
/// `cfg.out_dir`, and evaluate on the test file when one is configured.
pub fn train(cfg: &RunConfig) -> Result<(TrainOutcome, TrainArtifacts, Option<MetricsReport>)> {
    cfg.validate()?;
    let examples = load_split(cfg.data_train.as_deref(), "train")?;
    let (train, val) = split_validation(cfg, &examples);
    let vocab = Vocabulary::build(&train)?;
    let embeddings = load_embeddings_for(cfg, &vocab)?;
    let outcome = train_prepared(cfg, vocab, &train, &val, embeddings.as_ref())?;

    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let artifacts = TrainArtifacts {
        checkpoint: dir.join("model.ckpt"),
        vocab: dir.join("vocab.txt"),
        log_jsonl: dir.join("train_log.jsonl"),
        log_text: dir.join("train_log.txt"),
        config: dir.join("config.toml"),
        test_metrics: cfg.data_test.as_ref().map(|_| dir.join("test_metrics.json")),
    };
    save_checkpoint(
        &artifacts.checkpoint,
        &outcome.model,
        &outcome.vocab.hash(),
        Some(&outcome.adam),
    )?;
    outcome.vocab.save(&artifacts.vocab)?;
    write(&artifacts.log_jsonl, outcome.log_jsonl())?;
    write(&artifacts.log_text, outcome.log_text())?;
    write(&artifacts.config, cfg.to_toml())?;

    let test = match &artifacts.test_metrics {
        Some(path) => {
            let test = load_split(cfg.data_test.as_deref(), "test")?;
            let (report, skipped) = evaluate_raw(&outcome.model, &outcome.vocab, &test, cfg.batch_size)?;
            if skipped > 0 {
                log::warn!("{skipped} test headlines had no tokens and were not scored");
            }
            write(path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
            Some(report)
        }
        None => None,
    };
    Ok((outcome, artifacts, test))
}

/// Loads a checkpoint with its vocabulary, refusing a vocabulary other than
/// the one the checkpoint was trained with.
pub fn load_trained(checkpoint: &Path, vocab: &Path) -> Result<(Model<f32>, Vocabulary)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let vocab = Vocabulary::load(vocab)?;
    let hash = vocab.hash();
    if hash != ckpt.vocab_hash {
        return Err(Error::Checkpoint(format!(
            "vocabulary hash {hash} does not match the {} recorded in {}; \
             use the vocabulary file written by the same training run",
            ckpt.vocab_hash,
            checkpoint.display()
        )));
    }
    Ok((ckpt.model, vocab))
}

pub fn evaluate(checkpoint: &Path, vocab: &Path, data: &Path, batch_size: usize) -> Result<MetricsReport> {
    let (model, vocab) = load_trained(checkpoint, vocab)?;
    let examples = load_split(Some(data), "test")?;
    let (report, skipped) = evaluate_raw(&model, &vocab, &examples, batch_size)?;
    if skipped > 0 {
        log::warn!("{skipped} headlines had no tokens and were not scored");
    }
    Ok(report)
}
