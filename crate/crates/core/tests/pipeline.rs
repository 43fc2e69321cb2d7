mod common;

use cgl_mha::data::{load_dataset, ClassCounts, REFERENCE_TEST_COUNTS, REFERENCE_TRAIN_COUNTS};

#[test]
fn worked_examples() {
    let failed: Vec<&str> = common::conformance::pipeline_examples()
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| name)
        .collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

fn count_labels_by_scan(path: &std::path::Path) -> ClassCounts {
    let mut r = csv::Reader::from_path(path).unwrap();
    let col = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "label" || h == "is_sarcastic")
        .unwrap();
    let mut c = ClassCounts::default();
    for rec in r.records() {
        match rec.unwrap()[col].trim() {
            "1" => c.sarcastic += 1,
            _ => c.non_sarcastic += 1,
        }
    }
    c
}

#[test]
fn synthetic_split_counts_and_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    common::write_csv(&path, &common::headlines(301, 3, true));
    let ds = load_dataset(&path, None).unwrap();
    assert_eq!(ds.stats.counts, count_labels_by_scan(&path));
    assert_eq!(ds.stats.counts.total(), 301);
    let warning = ds.stats.mismatch(&REFERENCE_TRAIN_COUNTS, "train").unwrap();
    assert!(warning.contains("train"), "{warning}");
}

/// Runs only when the reference CSV splits are supplied.
#[test]
fn reference_splits_when_available() {
    for (var, expected) in [("CGL_HEADLINES_TRAIN", REFERENCE_TRAIN_COUNTS), ("CGL_HEADLINES_TEST", REFERENCE_TEST_COUNTS)] {
        let Ok(path) = std::env::var(var) else {
            eprintln!("{var} not set; skipping");
            continue;
        };
        let ds = load_dataset(path.as_ref(), None).unwrap();
        match ds.stats.mismatch(&expected, var) {
            None => assert_eq!(ds.stats.counts, expected),
            Some(w) => eprintln!("warning: {w}"),
        }
    }
}
