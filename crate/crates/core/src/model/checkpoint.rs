//! Binary checkpoint: a magic line, the byte length of a JSON manifest, the
//! manifest itself, then every tensor as contiguous little-endian f32.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &str = "CGLMHA-CHECKPOINT v1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    vocab_hash: String,
    adam_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

/// Everything a checkpoint restores.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub vocab_hash: String,
    pub adam: Option<AdamState>,
}

fn ckpt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

/// Writes `model` (and optionally the optimizer moments). The output is a
/// pure function of its inputs.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    model: &Model<T>,
    vocab_hash: &str,
    adam: Option<&AdamState>,
) -> Result<()> {
    let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    model.params.visit(&mut |name, t| {
        tensors.push((name, t.shape().to_vec(), t.data().iter().map(|v| v.as_f64() as f32).collect()));
    });
    if let Some(state) = adam {
        for (kind, moments) in [("m", &state.m), ("v", &state.v)] {
            for (name, values) in moments {
                let shape = vec![values.len()];
                tensors.push((format!("adam.{kind}.{name}"), shape, values.clone()));
            }
        }
    }
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, shape, data) in &tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
            len: data.len(),
        });
        offset += data.len();
    }
    let manifest = Manifest {
        config: model.config.clone(),
        vocab_hash: vocab_hash.to_owned(),
        adam_step: adam.map(|a| a.step),
        tensors: entries,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| ckpt_err(path, e))?;

    let mut bytes = Vec::with_capacity(64 + json.len() + offset * 4);
    writeln!(bytes, "{CHECKPOINT_MAGIC}").expect("vec write");
    writeln!(bytes, "{}", json.len()).expect("vec write");
    bytes.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_line<'a>(path: &Path, bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ckpt_err(path, "truncated header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| ckpt_err(path, "header is not UTF-8"))
}

/// Reads a checkpoint, checking every tensor against the shapes implied by
/// the stored configuration.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    if read_line(path, &bytes, &mut pos)? != CHECKPOINT_MAGIC {
        return Err(ckpt_err(path, "not a checkpoint (bad magic line)"));
    }
    let json_len: usize = read_line(path, &bytes, &mut pos)?
        .parse()
        .map_err(|_| ckpt_err(path, "bad manifest length"))?;
    let json = bytes
        .get(pos..pos + json_len)
        .ok_or_else(|| ckpt_err(path, "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| ckpt_err(path, e))?;
    let blob = &bytes[pos + json_len..];
    let total: usize = manifest.tensors.iter().map(|t| t.len).sum();
    if blob.len() != total * 4 {
        return Err(ckpt_err(
            path,
            format!("tensor data is {} bytes, manifest describes {}", blob.len(), total * 4),
        ));
    }
    let mut stored: BTreeMap<&str, (&TensorEntry, Vec<f32>)> = BTreeMap::new();
    for entry in &manifest.tensors {
        if entry.shape.iter().product::<usize>() != entry.len || entry.offset + entry.len > total {
            return Err(ckpt_err(path, format!("inconsistent entry for {}", entry.name)));
        }
        let data = blob[entry.offset * 4..(entry.offset + entry.len) * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        stored.insert(entry.name.as_str(), (entry, data));
    }

    let mut model = Model::<f32>::build(manifest.config.clone())?;
    let mut result = Ok(());
    model.params.visit_mut(&mut |name, t| {
        if result.is_err() {
            return;
        }
        match stored.remove(name.as_str()) {
            None => result = Err(ckpt_err(path, format!("missing tensor {name}"))),
            Some((entry, data)) if entry.shape != t.shape() => {
                result = Err(ckpt_err(
                    path,
                    format!("tensor {name} has shape {:?}, expected {:?}", entry.shape, t.shape()),
                ));
                drop(data);
            }
            Some((entry, data)) => match Tensor::new(entry.shape.clone(), data) {
                Ok(loaded) => *t = loaded.with_grad(),
                Err(e) => result = Err(e),
            },
        }
    });
    result?;

    let adam = match manifest.adam_step {
        None => None,
        Some(step) => {
            let mut state = AdamState {
                step,
                ..AdamState::default()
            };
            for (name, (_, data)) in std::mem::take(&mut stored) {
                if let Some(p) = name.strip_prefix("adam.m.") {
                    state.m.insert(p.to_owned(), data);
                } else if let Some(p) = name.strip_prefix("adam.v.") {
                    state.v.insert(p.to_owned(), data);
                } else {
                    return Err(ckpt_err(path, format!("unexpected tensor {name}")));
                }
            }
            Some(state)
        }
    };
    if let Some(name) = stored.keys().next() {
        return Err(ckpt_err(path, format!("unexpected tensor {name}")));
    }
    Ok(Checkpoint {
        model,
        vocab_hash: manifest.vocab_hash,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> ModelConfig {
        ModelConfig {
            vocab_size: 9,
            embed_dim: 4,
            max_len: 4,
            conv_filters: 4,
            gru_hidden: 4,
            lstm_hidden: 2,
            heads: 2,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let model = Model::<f32>::build(config()).unwrap();
        let mut adam = AdamState {
            step: 7,
            ..AdamState::default()
        };
        adam.m.insert("classifier.bias".into(), vec![0.25, -0.5]);
        adam.v.insert("classifier.bias".into(), vec![1.0, 2.0]);
        save_checkpoint(&a, &model, "abc", Some(&adam)).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded.model, model);
        assert_eq!(loaded.vocab_hash, "abc");
        assert_eq!(loaded.adam.as_ref(), Some(&adam));
        save_checkpoint(&b, &loaded.model, "abc", loaded.adam.as_ref()).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        save_checkpoint(&p, &Model::<f32>::build(config()).unwrap(), "h", None).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
        std::fs::write(&p, b"hello\n").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Checkpoint(_))));
    }
}
