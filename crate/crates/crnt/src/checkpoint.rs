//! Checkpoint files: `CRNT`, format version and header length as
//! little-endian `u32`, a JSON header, then every tensor as little-endian
//! `f32`. Parameters are followed by the optimizer moments, so training can
//! resume exactly.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crnt_core::model::{Model, ModelConfig};
use crnt_core::numerics::{AdamState, ParamStore, Tensor};
use crnt_core::tokenizer::Vocabulary;

use crate::config::TrainConfig;
use crate::error::{io_err, Error, Result};

const MAGIC: &[u8; 4] = b"CRNT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab_sha256: String,
    /// Completed training epochs.
    pub epoch: usize,
    pub optimizer: OptimizerHeader,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to evaluate or continue training a model.
pub struct TrainingState {
    pub model: Model,
    pub params: ParamStore,
    pub adam: AdamState,
    pub train: TrainConfig,
    pub epoch: usize,
}

pub fn vocab_hash(vocab: &Vocabulary) -> String {
    let digest = Sha256::digest(vocab.to_text().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

const FIRST_MOMENT: &str = "adam.m.";
const SECOND_MOMENT: &str = "adam.v.";

/// Serializes `state`. Values are stored as `f32`.
pub fn encode(state: &TrainingState, vocab: &Vocabulary) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, data: &[f64]| {
        tensors.push(TensorEntry {
            name,
            shape,
            dtype: "f32".into(),
            offset: payload.len(),
        });
        for &x in data {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    };
    for (_, name, t) in state.params.iter() {
        push(name.to_string(), t.shape().to_vec(), t.data());
    }
    for (id, name, t) in state.params.iter() {
        push(format!("{FIRST_MOMENT}{name}"), t.shape().to_vec(), state.adam.first_moment(id.index()));
    }
    for (id, name, t) in state.params.iter() {
        push(format!("{SECOND_MOMENT}{name}"), t.shape().to_vec(), state.adam.second_moment(id.index()));
    }
    let header = Header {
        model: state.model.config.clone(),
        train: state.train.clone(),
        vocab_sha256: vocab_hash(vocab),
        epoch: state.epoch,
        optimizer: OptimizerHeader {
            step: state.adam.step_count(),
            lr: state.adam.lr,
            beta1: state.adam.beta1,
            beta2: state.adam.beta2,
            epsilon: state.adam.epsilon,
        },
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

fn bad(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

pub fn decode(bytes: &[u8], vocab: &Vocabulary) -> Result<TrainingState> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_bytes = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(header_bytes).map_err(|e| bad(format!("header: {e}")))?;
    let payload = &bytes[12 + hlen..];
    if header.vocab_sha256 != vocab_hash(vocab) {
        return Err(bad("vocabulary does not match the one the model was trained with"));
    }
    let read = |e: &TensorEntry| -> Result<Tensor> {
        if e.dtype != "f32" {
            return Err(bad(format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let bytes = payload
            .get(e.offset..e.offset + 4 * n)
            .ok_or_else(|| bad(format!("tensor {} exceeds the payload", e.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Tensor::new(e.shape.clone(), data)?)
    };
    let by_name: std::collections::HashMap<&str, &TensorEntry> =
        header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();

    // Rebuilding the model registers every parameter under its name; stored
    // values then replace the initial ones.
    let mut params = ParamStore::new();
    let model = Model::new(header.model.clone(), &mut params, &mut ChaCha8Rng::seed_from_u64(0))?;
    if header.tensors.len() != 3 * params.len() {
        return Err(bad(format!(
            "{} tensors stored for a model of {} parameters",
            header.tensors.len(),
            params.len()
        )));
    }
    let mut first = Vec::with_capacity(params.len());
    let mut second = Vec::with_capacity(params.len());
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let name = params.name(id).to_string();
        let fetch = |n: &str| -> Result<Tensor> {
            let e = by_name.get(n).ok_or_else(|| bad(format!("missing tensor {n}")))?;
            read(e)
        };
        let value = fetch(&name)?;
        if value.shape() != params.get(id).shape() {
            return Err(bad(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                value.shape(),
                params.get(id).shape()
            )));
        }
        *params.get_mut(id) = value;
        first.push(fetch(&format!("{FIRST_MOMENT}{name}"))?.into_data());
        second.push(fetch(&format!("{SECOND_MOMENT}{name}"))?.into_data());
    }
    let o = &header.optimizer;
    let mut adam = AdamState::with_hyperparams(&params, o.lr, o.beta1, o.beta2, o.epsilon);
    adam.restore(o.step, first, second)?;
    Ok(TrainingState {
        model,
        params,
        adam,
        train: header.train,
        epoch: header.epoch,
    })
}

pub fn save(path: &Path, state: &TrainingState, vocab: &Vocabulary) -> Result<()> {
    std::fs::write(path, encode(state, vocab)).map_err(io_err(path))
}

pub fn load(path: &Path, vocab: &Vocabulary) -> Result<TrainingState> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, vocab)
}
