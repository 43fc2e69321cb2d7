//! End-to-end training scenarios shared by the training tests and the
//! acceptance run.

use std::path::Path;

use cgl_mha::data::{encode_all, load_dataset, RawExample, Vocabulary};
use cgl_mha::model::{Model, ModelConfig};
use cgl_mha::optim::{adam_step, AdamHyper, AdamState};
use cgl_mha::train::{evaluate, evaluate_encoded, train, RunConfig};

/// Narrow model for fast end-to-end runs.
pub fn small_run(dir: &Path) -> RunConfig {
    RunConfig {
        epochs: 3,
        batch_size: 16,
        use_pretrained: false,
        out_dir: dir.to_path_buf(),
        model: ModelConfig {
            embed_dim: 16,
            conv_filters: 16,
            gru_hidden: 16,
            lstm_hidden: 8,
            heads: 2,
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    }
}

pub struct Determinism {
    pub logs_identical: bool,
    pub checkpoints_identical: bool,
    pub round_trip_identical: bool,
}

/// Two file-based runs with the same config and seed, then a reload of the
/// first checkpoint and a re-evaluation of the test split.
pub fn determinism(root: &Path) -> Determinism {
    let train_csv = root.join("train.csv");
    let test_csv = root.join("test.csv");
    super::write_csv(&train_csv, &super::headlines(400, 21, true));
    super::write_csv(&test_csv, &super::headlines(120, 22, true));
    let run = |name: &str| {
        let mut cfg = small_run(&root.join(name));
        cfg.data_train = Some(train_csv.clone());
        cfg.data_test = Some(test_csv.clone());
        train(&cfg).unwrap()
    };
    let (_, a, report_a) = run("a");
    let (_, b, _) = run("b");
    let read = |p: &Path| std::fs::read(p).unwrap();
    let reloaded = evaluate(&a.checkpoint, &a.vocab, &test_csv, 7).unwrap();
    Determinism {
        logs_identical: read(&a.log_jsonl) == read(&b.log_jsonl) && read(&a.log_text) == read(&b.log_text),
        checkpoints_identical: read(&a.checkpoint) == read(&b.checkpoint),
        round_trip_identical: Some(reloaded) == report_a,
    }
}

pub struct Overfit {
    pub source: &'static str,
    pub epochs: usize,
    pub train_accuracy: f64,
}

/// 64 balanced examples: the first 32 of each class from the file named
/// by `CGL_HEADLINES_TRAIN`, or synthetic headlines whose labels carry no
/// signal (so they must be memorized).
pub fn overfit_subset() -> (Vec<RawExample>, &'static str) {
    if let Ok(path) = std::env::var("CGL_HEADLINES_TRAIN") {
        let all = load_dataset(path.as_ref(), None).unwrap().examples;
        let mut out = Vec::new();
        for label in [0, 1] {
            out.extend(all.iter().filter(|e| e.label == label && !e.tokens().is_empty()).take(32).cloned());
        }
        return (out, "reference train split");
    }
    (super::headlines(64, 64, false), "synthetic random labels")
}

/// Full-size model, Adam at lr 0.001 with decay 0, batch 32, every example
/// seen once per epoch; stops as soon as train accuracy reaches 0.99.
pub fn overfit(max_epochs: usize) -> Overfit {
    let (examples, source) = overfit_subset();
    let vocab = Vocabulary::build(&examples).unwrap();
    let config = ModelConfig {
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let (encoded, _) = encode_all(&examples, &vocab, config.max_len).unwrap();
    let mut model = Model::<f32>::build(config).unwrap();
    let hyper = AdamHyper {
        weight_decay: 0.0,
        ..AdamHyper::default()
    };
    let mut state = AdamState::default();
    let mut acc = 0.0;
    for epoch in 1..=max_epochs {
        for batch in encoded.chunks(32) {
            model.compute_gradients(batch).unwrap();
            adam_step(&mut model, &mut state, &hyper).unwrap();
        }
        acc = evaluate_encoded(&model, &encoded, 64).unwrap().0.accuracy;
        if acc >= 0.99 {
            return Overfit {
                source,
                epochs: epoch,
                train_accuracy: acc,
            };
        }
    }
    Overfit {
        source,
        epochs: max_epochs,
        train_accuracy: acc,
    }
}
