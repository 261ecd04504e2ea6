//! Location-aware additive attention over context-word embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub pred_dim: usize,
    pub embed_dim: usize,
    pub att_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
}

/// `A`, `B`, `C`, `w`, `b` of the energy function plus the convolution `Q`
/// (with its own bias) applied to the previous step's weights.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub a: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub w: ParamId,
    pub bias: ParamId,
    pub q: ParamId,
    pub q_bias: ParamId,
    pub config: AttentionConfig,
}

impl AttentionParams {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &AttentionConfig, rng: &mut R) -> Result<Self> {
        if cfg.conv_kernel % 2 == 0 {
            return arg_err("attention config", format!("conv kernel {} must be odd", cfg.conv_kernel));
        }
        Ok(Self {
            a: store.add_uniform(format!("{prefix}.A"), &[cfg.att_dim, cfg.pred_dim], rng),
            b: store.add_uniform(format!("{prefix}.B"), &[cfg.att_dim, cfg.embed_dim], rng),
            c: store.add_uniform(format!("{prefix}.C"), &[cfg.att_dim, cfg.conv_channels], rng),
            w: store.add_uniform(format!("{prefix}.w"), &[cfg.att_dim], rng),
            bias: store.add_zeros(format!("{prefix}.b"), &[cfg.att_dim]),
            q: store.add_uniform(format!("{prefix}.Q"), &[cfg.conv_channels, cfg.conv_kernel], rng),
            q_bias: store.add_zeros(format!("{prefix}.Q.b"), &[cfg.conv_channels]),
            config: cfg.clone(),
        })
    }

    /// `B h_i` for every word embedding row of `embeddings: [N x 2h]`. This part
    /// of the energy does not change across steps.
    pub fn project_embeddings(&self, g: &mut Graph, embeddings: Var) -> Result<Var> {
        let b = g.param(self.b);
        g.linear(embeddings, b, None)
    }

    /// Attention weights for one predictor step.
    ///
    /// `projected` comes from [`AttentionParams::project_embeddings`];
    /// `alpha_prev` holds the previous step's weights.
    pub fn step(&self, g: &mut Graph, h_pred: Var, projected: Var, alpha_prev: Var) -> Result<Var> {
        let n = g.value(alpha_prev).len();
        if g.value(projected).rows() != n {
            return shape_err(
                "attention_step",
                format!("{} previous weights for {} words", n, g.value(projected).rows()),
            );
        }
        let (q, q_bias) = (g.param(self.q), g.param(self.q_bias));
        let f = g.conv1d(alpha_prev, q, q_bias)?;
        let (c, bias) = (g.param(self.c), g.param(self.bias));
        let cf = g.linear(f, c, Some(bias))?;
        let words = g.add(projected, cf)?;
        let a = g.param(self.a);
        let ah = g.linear(h_pred, a, None)?;
        let ah = g.reshape(ah, vec![1, self.config.att_dim])?;
        let pre = g.outer_sum(ah, words)?;
        let act = g.tanh(pre);
        let w = g.param(self.w);
        let w = g.reshape(w, vec![1, self.config.att_dim])?;
        let e = g.linear(act, w, None)?;
        let e = g.reshape(e, vec![n])?;
        g.softmax(e)
    }
}

/// Uniform weights used before the first step.
pub fn initial_alpha(n: usize) -> Tensor {
    Tensor::filled(&[n], 1.0 / n as f64)
}

/// `sum_i alpha[i] * h_i`, or zeros of width `embed_dim` without context words.
pub fn context_vector(g: &mut Graph, alpha: Option<Var>, embeddings: Option<Var>, embed_dim: usize) -> Result<Var> {
    match (alpha, embeddings) {
        (Some(a), Some(e)) => g.weighted_sum(a, e),
        _ => Ok(g.constant(Tensor::zeros(&[embed_dim]))),
    }
}
