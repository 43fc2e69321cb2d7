use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Vocabulary, PAD_ID};
use crate::error::{Error, Result};
use crate::layers::EmbeddingParams;
use crate::tensor::{Scalar, Tensor};

/// Rows without a pre-trained vector are drawn from uniform(−b, b).
pub const OOV_INIT_BOUND: f64 = 0.05;

/// Pre-trained word vectors read from `token v1 … vD` lines.
#[derive(Clone, Debug, Default)]
pub struct EmbeddingSource {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingSource {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Data(format!(
                "vector of dimension {} for a {}-d embedding source",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.entry(token.into()).or_insert(vector);
        Ok(())
    }

    /// Loads every line; when `keep` is given only its tokens are retained,
    /// though every line is still validated.
    pub fn load(path: &Path, dim: usize, keep: Option<&Vocabulary>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut source = Self::new(dim);
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if values.len() != dim {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("expected {dim} components for {token:?}, found {}", values.len()),
                ));
            }
            if keep.is_some_and(|v| v.get(token).is_none()) {
                continue;
            }
            let vector = values
                .iter()
                .map(|v| v.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, line_no, format!("bad component: {e}")))?;
            source.vectors.entry(token.to_owned()).or_insert(vector);
        }
        Ok(source)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// How many vocabulary tokens received a pre-trained vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EmbeddingCoverage {
    pub found: usize,
    pub total: usize,
}

impl EmbeddingCoverage {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.found as f64 / self.total as f64
        }
    }
}

/// Random `[vocab × dim]` table with a zero pad row.
pub fn random_embedding_table<T: Scalar>(rng: &mut ChaCha8Rng, vocab_size: usize, dim: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(vocab_size * dim);
    for id in 0..vocab_size {
        for _ in 0..dim {
            data.push(if id as u32 == PAD_ID {
                T::zero()
            } else {
                T::from_f64_lossy(rng.gen_range(-OOV_INIT_BOUND..=OOV_INIT_BOUND))
            });
        }
    }
    Ok(Tensor::new([vocab_size, dim], data)?.with_grad())
}

/// Builds the embedding table for `vocab`: pre-trained rows are copied,
/// every other row (including the unknown token) is seeded uniform noise,
/// and the pad row is zero.
pub fn init_embeddings<T: Scalar>(
    vocab: &Vocabulary,
    source: &EmbeddingSource,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingParams<Tensor<T>>, EmbeddingCoverage)> {
    if source.dim() != dim {
        return Err(Error::Config(format!(
            "embedding source has dimension {}, model expects {dim}",
            source.dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = random_embedding_table::<T>(&mut rng, vocab.len(), dim)?;
    let mut found = 0;
    for (i, tok) in vocab.tokens().iter().enumerate() {
        if let Some(v) = source.get(tok) {
            let row = (i + 2) * dim;
            for (dst, &src) in table.data_mut()[row..row + dim].iter_mut().zip(v) {
                *dst = T::from_f64_lossy(src as f64);
            }
            found += 1;
        }
    }
    let coverage = EmbeddingCoverage {
        found,
        total: vocab.tokens().len(),
    };
    Ok((EmbeddingParams { table }, coverage))
}
