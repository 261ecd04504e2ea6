//! Mini-batch training with Adam, per-epoch checkpoints and a loss log.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crnt_core::contextualizer::{normalize_metadata, ContextSet};
use crnt_core::model::Model;
use crnt_core::numerics::{AdamState, Gradients, Graph, ParamStore, Tensor};
use crnt_core::rnnt::ModelMode;
use crnt_core::tokenizer::{TokenSeq, Vocabulary};

use crate::checkpoint::{self, TrainingState};
use crate::config::TrainConfig;
use crate::error::{io_err, Error, Result};
use crate::features::read_features;
use crate::manifest::Manifest;
use crate::specaug::{spec_mask, MaskPolicy};

/// One utterance ready for the model.
#[derive(Clone, Debug)]
pub struct Example {
    pub utterance_id: String,
    pub features: Tensor,
    pub targets: TokenSeq,
    pub context: ContextSet,
}

pub fn prepare_examples(manifest: &Manifest, vocab: &Vocabulary) -> Result<Vec<Example>> {
    manifest
        .records
        .iter()
        .map(|r| {
            Ok(Example {
                utterance_id: r.utterance_id.clone(),
                features: read_features(&manifest.features_path(r))?,
                targets: vocab.encode(&r.transcript)?,
                context: ContextSet::new(&normalize_metadata(&r.metadata_words), vocab),
            })
        })
        .collect()
}

/// Generator for everything random about utterance `index` in `epoch`.
fn utterance_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((epoch as u64) << 32) | index as u64);
    r
}

fn shuffle_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    r.set_stream(epoch as u64);
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_nll: f64,
}

pub struct Trainer {
    pub state: TrainingState,
    pub vocab: Vocabulary,
}

impl Trainer {
    pub fn new(config: TrainConfig, mode: ModelMode, vocab: Vocabulary, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config.model_config(mode, vocab.len(), feature_dim), &mut params, &mut rng)?;
        let adam = AdamState::new(&params, config.learning_rate);
        Ok(Self {
            state: TrainingState {
                model,
                params,
                adam,
                train: config,
                epoch: 0,
            },
            vocab,
        })
    }

    pub fn from_checkpoint(path: &Path, vocab: Vocabulary) -> Result<Self> {
        let state = checkpoint::load(path, &vocab)?;
        Ok(Self { state, vocab })
    }

    fn policy(&self) -> MaskPolicy {
        let c = &self.state.train;
        MaskPolicy {
            freq_masks: c.freq_masks,
            max_freq_width: c.max_freq_width,
            time_masks: c.time_masks,
            max_time_width: c.max_time_width,
        }
    }

    /// Negative log-likelihood of one example without augmentation or dropout.
    pub fn eval_nll(&self, ex: &Example) -> Result<f64> {
        let mut g = Graph::new(&self.state.params);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.state.model.utterance_loss(
            &mut g,
            &ex.features,
            &ex.targets,
            &ex.context,
            &self.vocab,
            false,
            &mut rng,
        )?;
        Ok(out.nll)
    }

    /// Gradients and loss of one training example.
    fn example_gradients(&self, ex: &Example, index: usize, epoch: usize) -> Result<(Gradients, f64)> {
        let policy = self.policy();
        let mut rng = utterance_rng(self.state.train.seed, epoch, index);
        let feats = if policy.is_identity() {
            ex.features.clone()
        } else {
            spec_mask(&ex.features, &policy, &mut rng)?
        };
        let mut g = Graph::new(&self.state.params);
        let out = self.state.model.utterance_loss(
            &mut g,
            &feats,
            &ex.targets,
            &ex.context,
            &self.vocab,
            true,
            &mut rng,
        )?;
        let back = g.backward(out.loss)?;
        let mut grads = Gradients::zeros_like(&self.state.params);
        g.accumulate_param_grads(&back, &mut grads);
        Ok((grads, out.nll))
    }

    /// Summed gradients and losses of the examples at `indices`. Examples run
    /// in parallel; the sum is taken in batch order, so results do not depend
    /// on the thread count.
    fn batch_gradients(&self, data: &[Example], indices: &[usize], epoch: usize) -> Result<(Gradients, Vec<f64>)> {
        let parts = indices
            .par_iter()
            .map(|&i| self.example_gradients(&data[i], i, epoch))
            .collect::<Result<Vec<_>>>()?;
        let mut grads = Gradients::zeros_like(&self.state.params);
        let mut nlls = Vec::with_capacity(parts.len());
        for (g, nll) in parts {
            grads.add_assign(&g);
            nlls.push(nll);
        }
        Ok((grads, nlls))
    }

    fn first_non_finite_param(&self) -> Option<String> {
        self.state
            .params
            .iter()
            .find(|(_, _, t)| !t.all_finite())
            .map(|(_, n, _)| n.to_string())
    }

    /// One optimizer step on the mean loss of the batch; returns that mean.
    pub fn train_step(&mut self, data: &[Example], indices: &[usize], epoch: usize, batch: usize) -> Result<f64> {
        let (mut grads, nlls) = self.batch_gradients(data, indices, epoch)?;
        let diverged = |detail: String| Error::Diverged { epoch, batch, detail };
        if let Some((k, nll)) = nlls.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            let culprit = match self.first_non_finite_param() {
                Some(name) => format!("; parameter {name} is not finite"),
                None => String::new(),
            };
            return Err(diverged(format!(
                "loss of {} is {nll}{culprit}",
                data[indices[k]].utterance_id
            )));
        }
        if !grads.all_finite() {
            let name = self
                .state
                .params
                .ids()
                .find(|&id| grads.get(id).iter().any(|x| !x.is_finite()))
                .map(|id| self.state.params.name(id).to_string())
                .unwrap_or_default();
            return Err(diverged(format!("gradient of {name} is not finite")));
        }
        grads.scale(1.0 / indices.len() as f64);
        let clip = self.state.train.max_grad_norm;
        if clip > 0.0 {
            let norm = self
                .state
                .params
                .ids()
                .map(|id| grads.get(id).iter().map(|x| x * x).sum::<f64>())
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        self.state.adam.step(&mut self.state.params, &grads)?;
        if let Some(name) = self.first_non_finite_param() {
            return Err(diverged(format!("parameter {name} is not finite after the update")));
        }
        Ok(nlls.iter().sum::<f64>() / nlls.len() as f64)
    }

    /// Mini-batches of the next epoch in training order.
    pub fn epoch_batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng(self.state.train.seed, epoch));
        order.chunks(self.state.train.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Trains one epoch and returns its mean per-utterance loss.
    pub fn run_epoch(&mut self, data: &[Example]) -> Result<EpochLog> {
        let epoch = self.state.epoch;
        self.state.adam.lr = self.state.train.epoch_learning_rate(epoch);
        let mut total = 0.0;
        for (b, batch) in self.epoch_batches(data.len(), epoch).iter().enumerate() {
            total += self.train_step(data, batch, epoch, b)? * batch.len() as f64;
        }
        self.state.epoch += 1;
        Ok(EpochLog {
            epoch: self.state.epoch,
            mean_nll: total / data.len() as f64,
        })
    }

    /// Rounds parameters and optimizer moments to the checkpoint precision,
    /// so a run continued from a saved checkpoint matches one that never
    /// stopped.
    pub fn quantize(&mut self) {
        self.state.params.quantize_f32();
        self.state.adam.quantize_f32();
    }

    pub fn save(&mut self, path: &Path) -> Result<()> {
        self.quantize();
        checkpoint::save(path, &self.state, &self.vocab)
    }
}

pub const LOSS_LOG: &str = "loss.jsonl";
pub const LATEST_CHECKPOINT: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";

pub fn epoch_checkpoint(out: &Path, epoch: usize) -> PathBuf {
    out.join(format!("epoch-{epoch:03}.ckpt"))
}

/// Trains for the configured number of epochs, writing a checkpoint per
/// epoch, the latest checkpoint, the vocabulary and the loss log into `out`.
pub fn train_to_dir(
    trainer: &mut Trainer,
    data: &[Example],
    out: &Path,
    mut progress: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let vocab_path = out.join(VOCAB_FILE);
    std::fs::write(&vocab_path, trainer.vocab.to_text()).map_err(io_err(&vocab_path))?;
    let log_path = out.join(LOSS_LOG);
    let mut log = std::fs::File::create(&log_path).map_err(io_err(&log_path))?;
    let mut logs = Vec::new();
    while trainer.state.epoch < trainer.state.train.epochs {
        let entry = trainer.run_epoch(data)?;
        trainer.save(&epoch_checkpoint(out, entry.epoch))?;
        trainer.save(&out.join(LATEST_CHECKPOINT))?;
        writeln!(log, "{}", serde_json::to_string(&entry).expect("log entry serializes")).map_err(io_err(&log_path))?;
        progress(&entry);
        logs.push(entry);
    }
    Ok(logs)
}
