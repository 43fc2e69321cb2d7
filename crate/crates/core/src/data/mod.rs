//! Text preprocessing and dataset plumbing: normalization, tokenization,
//! vocabulary, fixed-length encoding, dataset files, pre-trained vectors
//! and batching.

mod batch;
mod dataset;
mod embeddings;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{batch_iter, stratified_split};
pub use dataset::{load_dataset, ClassCounts, DatasetFormat, LoadedDataset, SplitStats, REFERENCE_TEST_COUNTS, REFERENCE_TRAIN_COUNTS};
pub use embeddings::{init_embeddings, random_embedding_table, EmbeddingCoverage, EmbeddingSource, OOV_INIT_BOUND};
pub use vocab::{Vocabulary, PAD_ID, UNK_ID};

/// Default fixed sequence length.
pub const DEFAULT_MAX_LEN: usize = 20;

/// A headline with its label (1 = sarcastic, 0 = not).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawExample {
    pub headline: String,
    pub label: usize,
}

impl RawExample {
    pub fn new(headline: impl Into<String>, label: usize) -> Result<Self> {
        if label > 1 {
            return Err(Error::Data(format!("label {label} is not 0 or 1")));
        }
        Ok(Self {
            headline: headline.into(),
            label,
        })
    }

    pub fn tokens(&self) -> Vec<String> {
        tokenize(&normalize(&self.headline))
    }
}

/// Fixed-length token ids with a prefix pad mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<u32>,
    /// `true` for real tokens; always a run of trues followed by falses.
    pub mask: Vec<bool>,
    pub label: usize,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_tokens(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Lowercases, maps everything outside `[a-z0-9]` to spaces and collapses
/// whitespace runs.
pub fn normalize(text: &str) -> String {
    let mapped: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_ascii_lowercase() || c.is_ascii_digit() { c } else { ' ' })
        .collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace tokenization of normalized text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(' ').filter(|t| !t.is_empty()).map(str::to_owned).collect()
}

/// Maps tokens to ids, keeping the leftmost `max_len` and padding with
/// [`PAD_ID`]. Unknown tokens become [`UNK_ID`].
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize, label: usize) -> Result<EncodedExample> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be positive".into()));
    }
    if tokens.is_empty() {
        return Err(Error::Data("example has no tokens after normalization".into()));
    }
    let real = tokens.len().min(max_len);
    let mut ids = vec![PAD_ID; max_len];
    let mut mask = vec![false; max_len];
    for (i, tok) in tokens.iter().take(real).enumerate() {
        ids[i] = vocab.id(tok.as_ref());
        mask[i] = true;
    }
    Ok(EncodedExample { ids, mask, label })
}

/// Inverse of [`encode`] over the real positions.
pub fn decode(example: &EncodedExample, vocab: &Vocabulary) -> Vec<String> {
    example
        .ids
        .iter()
        .zip(&example.mask)
        .filter(|(_, &m)| m)
        .map(|(&id, _)| vocab.token(id).to_owned())
        .collect()
}

/// Encodes a corpus, dropping (and logging) examples with no tokens.
/// Returns the encoded examples and the number rejected.
pub fn encode_all(examples: &[RawExample], vocab: &Vocabulary, max_len: usize) -> Result<(Vec<EncodedExample>, usize)> {
    let mut out = Vec::with_capacity(examples.len());
    let mut rejected = 0;
    for (i, ex) in examples.iter().enumerate() {
        match encode(&ex.tokens(), vocab, max_len, ex.label) {
            Ok(e) => out.push(e),
            Err(Error::Data(_)) => {
                log::warn!("skipping example {i} with no tokens: {:?}", ex.headline);
                rejected += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, rejected))
}
