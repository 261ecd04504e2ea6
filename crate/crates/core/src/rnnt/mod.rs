//! Joiner variants, the output head, and the transducer loss.

mod loss;

pub use loss::{rnnt_bruteforce, rnnt_loss, BruteForce, LatticeTables, LossOutput, BRUTEFORCE_MAX_NODES};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::{Activation, Graph, ParamId, ParamStore, Var};

/// Which contextual inputs feed the joiner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Baseline,
    Att,
    Bias,
    AttBias,
}

impl ModelMode {
    pub const ALL: [ModelMode; 4] = [ModelMode::Baseline, ModelMode::Att, ModelMode::Bias, ModelMode::AttBias];

    pub fn uses_attention(self) -> bool {
        matches!(self, ModelMode::Att | ModelMode::AttBias)
    }

    pub fn uses_bias(self) -> bool {
        matches!(self, ModelMode::Bias | ModelMode::AttBias)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelMode::Baseline => "baseline",
            ModelMode::Att => "att",
            ModelMode::Bias => "bias",
            ModelMode::AttBias => "att_bias",
        }
    }
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument {
                op: "model mode",
                detail: format!("unknown mode {s:?} (expected baseline, att, bias or att_bias)"),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JoinerConfig {
    pub enc_dim: usize,
    pub pred_dim: usize,
    /// Width of the attention context vector; ignored without attention.
    pub context_dim: usize,
    pub joint_dim: usize,
    pub vocab_size: usize,
    pub activation: Activation,
    pub bias_dropout: f64,
}

impl JoinerConfig {
    pub fn pred_in_dim(&self, mode: ModelMode) -> usize {
        if mode.uses_attention() {
            self.pred_dim + self.context_dim
        } else {
            self.pred_dim
        }
    }
}

#[derive(Clone, Debug)]
pub struct JoinerParams {
    pub u: ParamId,
    pub v: ParamId,
    pub b: ParamId,
    /// Present in the biasing modes.
    pub bias_proj: Option<ParamId>,
    pub w_y: ParamId,
    pub out_b: ParamId,
    pub mode: ModelMode,
    pub config: JoinerConfig,
}

impl JoinerParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        mode: ModelMode,
        cfg: &JoinerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.bias_dropout) {
            return arg_err("joiner config", format!("bias dropout {} outside [0, 1)", cfg.bias_dropout));
        }
        let j = cfg.joint_dim;
        Ok(Self {
            u: store.add_uniform(format!("{prefix}.U"), &[j, cfg.enc_dim], rng),
            v: store.add_uniform(format!("{prefix}.V"), &[j, cfg.pred_in_dim(mode)], rng),
            b: store.add_zeros(format!("{prefix}.b"), &[j]),
            bias_proj: mode
                .uses_bias()
                .then(|| store.add_uniform(format!("{prefix}.bias_proj"), &[j, cfg.vocab_size], rng)),
            w_y: store.add_uniform(format!("{prefix}.W_y"), &[cfg.vocab_size, j], rng),
            out_b: store.add_zeros(format!("{prefix}.out_b"), &[cfg.vocab_size]),
            mode,
            config: cfg.clone(),
        })
    }

    /// `U h_enc` for one frame or a row-stacked batch of frames.
    pub fn encoder_part(&self, g: &mut Graph, h_enc: Var) -> Result<Var> {
        let u = g.param(self.u);
        g.linear(h_enc, u, None)
    }

    /// Everything inside the activation that depends on the label position:
    /// `V [c_u; h_pred] + Dropout(bias_proj b_u) + b`, for one position or a
    /// row-stacked batch.
    pub fn prediction_part<R: Rng>(
        &self,
        g: &mut Graph,
        h_pred: Var,
        c_u: Option<Var>,
        b_u: Option<Var>,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let pred_in = match (self.mode.uses_attention(), c_u) {
            (true, Some(c)) => g.concat(&[c, h_pred])?,
            (true, None) => return arg_err("joiner", format!("mode {} needs a context vector", self.mode)),
            (false, _) => h_pred,
        };
        let (v, b) = (g.param(self.v), g.param(self.b));
        let mut out = g.linear(pred_in, v, Some(b))?;
        if let Some(proj) = self.bias_proj {
            let Some(b_u) = b_u else {
                return arg_err("joiner", format!("mode {} needs a bias vector", self.mode));
            };
            let proj = g.param(proj);
            let projected = g.linear(b_u, proj, None)?;
            let dropped = g.dropout(projected, self.config.bias_dropout, training, rng)?;
            out = g.add(out, dropped)?;
        }
        Ok(out)
    }

    /// Unnormalized scores `W_y z + bias`.
    pub fn output_logits(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w_y), g.param(self.out_b));
        g.linear(z, w, Some(b))
    }

    /// Logits for every lattice node, rows ordered `t * rows(pred) + u`.
    pub fn lattice_logits(&self, g: &mut Graph, enc_part: Var, pred_part: Var) -> Result<Var> {
        let pre = g.outer_sum(enc_part, pred_part)?;
        let z = self.config.activation.apply(g, pre);
        self.output_logits(g, z)
    }
}

/// Joint embedding `z_tu` for one frame and one label position.
#[allow(clippy::too_many_arguments)]
pub fn joiner<R: Rng>(
    g: &mut Graph,
    p: &JoinerParams,
    h_enc: Var,
    h_pred: Var,
    c_u: Option<Var>,
    b_u: Option<Var>,
    training: bool,
    rng: &mut R,
) -> Result<Var> {
    let enc = p.encoder_part(g, h_enc)?;
    let pred = p.prediction_part(g, h_pred, c_u, b_u, training, rng)?;
    let pre = g.add(enc, pred)?;
    Ok(p.config.activation.apply(g, pre))
}

/// Log distribution over the vocabulary (blank included) for `z`.
pub fn output_distribution(g: &mut Graph, p: &JoinerParams, z: Var) -> Result<Var> {
    let logits = p.output_logits(g, z)?;
    g.log_softmax(logits)
}
