#![allow(dead_code)]

pub mod conformance;
pub mod oracles;
pub mod scenarios;

use cgl_mha::data::RawExample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SARCASTIC_CUES: [&str; 6] = ["area", "nation", "local", "heroically", "finally", "shocked"];
const PLAIN_CUES: [&str; 6] = ["senate", "report", "policy", "study", "officials", "market"];

fn filler(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    format!("w{}", rng.gen_range(0..vocab))
}

/// Balanced synthetic headlines. With `signal`, each headline carries two
/// class-specific cue words; without it the labels are unrelated to the
/// text and can only be memorized.
pub fn headlines(n: usize, seed: u64, signal: bool) -> Vec<RawExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    labels
        .into_iter()
        .map(|label| {
            let len = rng.gen_range(4..=14);
            let mut words: Vec<String> = (0..len).map(|_| filler(&mut rng, 400)).collect();
            if signal {
                let cues = if label == 1 { &SARCASTIC_CUES } else { &PLAIN_CUES };
                for _ in 0..2 {
                    let at = rng.gen_range(0..len);
                    words[at] = cues.choose(&mut rng).unwrap().to_string();
                }
            }
            let mut text = words.join(" ");
            if rng.gen_bool(0.3) {
                text.push('!');
            }
            RawExample::new(text, label).unwrap()
        })
        .collect()
}

/// Writes examples as a `headline,label` CSV.
pub fn write_csv(path: &std::path::Path, examples: &[RawExample]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["headline", "label"]).unwrap();
    for e in examples {
        w.write_record([e.headline.as_str(), &e.label.to_string()]).unwrap();
    }
    w.flush().unwrap();
}
