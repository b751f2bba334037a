//! Text checkpoints: one JSON document holding the hyperparameters, the
//! vocabulary and every named, shape-tagged tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamTensor, PolicyError, PolicyHyper, PolicyParams};
use crate::corpus::Vocab;

const FORMAT: &str = "rlfr-policy";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    hyper: PolicyHyper,
    vocab: Vocab,
    tensors: Vec<ParamTensor>,
}

pub fn save(path: impl AsRef<Path>, params: &PolicyParams, vocab: &Vocab) -> Result<(), PolicyError> {
    let path = path.as_ref();
    if vocab.len() != params.hyper().vocab_size {
        return Err(PolicyError::Checkpoint(format!(
            "vocabulary has {} symbols but the model expects {}",
            vocab.len(),
            params.hyper().vocab_size
        )));
    }
    let ck = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        hyper: *params.hyper(),
        vocab: vocab.clone(),
        tensors: params.tensors().to_vec(),
    };
    let text = serde_json::to_string(&ck).expect("checkpoint serializes");
    fs::write(path, text).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })
}

/// Loads and validates a checkpoint: format tag, version, tensor names and
/// shapes, finiteness, and vocabulary size.
pub fn load(path: impl AsRef<Path>) -> Result<(PolicyParams, Vocab), PolicyError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
    let ck: Checkpoint =
        serde_json::from_str(&text).map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))?;
    if ck.format != FORMAT || ck.version != VERSION {
        return Err(PolicyError::Checkpoint(format!(
            "unsupported format {:?} version {}",
            ck.format, ck.version
        )));
    }
    if ck.vocab.len() != ck.hyper.vocab_size {
        return Err(PolicyError::Checkpoint(format!(
            "vocabulary has {} symbols but hyperparameters say {}",
            ck.vocab.len(),
            ck.hyper.vocab_size
        )));
    }
    let params = PolicyParams::from_tensors(ck.hyper, ck.tensors)?;
    Ok((params, ck.vocab))
}
