//! LSTM cells and the recurrent stacks built from them: the bidirectional
//! audio encoder with time subsampling, the text predictor, and the
//! bidirectional context-word embedding extractor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::{BLANK_ID, CTX_END_ID};

/// Weights of one LSTM layer in one direction. Gate order is
/// (input, forget, cell, output).
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            w_ih: store.add_uniform(format!("{prefix}.w_ih"), &[4 * hidden, input], rng),
            w_hh: store.add_uniform(format!("{prefix}.w_hh"), &[4 * hidden, hidden], rng),
            bias: store.add_zeros(format!("{prefix}.bias"), &[4 * hidden]),
            input,
            hidden,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        Self {
            h: g.constant(Tensor::zeros(&[hidden])),
            c: g.constant(Tensor::zeros(&[hidden])),
        }
    }

    pub fn from_values(g: &mut Graph, v: &LstmStateValue) -> Self {
        Self {
            h: g.constant(v.h.clone()),
            c: g.constant(v.c.clone()),
        }
    }

    pub fn values(&self, g: &Graph) -> LstmStateValue {
        LstmStateValue {
            h: g.value(self.h).clone(),
            c: g.value(self.c).clone(),
        }
    }
}

/// Detached copy of an [`LstmState`], carried between decoding steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmStateValue {
    pub h: Tensor,
    pub c: Tensor,
}

fn finish_step(g: &mut Graph, p: &LstmParams, pre: Var, s: &LstmState) -> Result<LstmState> {
    let cell = g.lstm_cell(pre, s.c)?;
    Ok(LstmState {
        h: g.slice(cell, 0, p.hidden)?,
        c: g.slice(cell, p.hidden, p.hidden)?,
    })
}

/// One LSTM update for input `x`.
pub fn lstm_step(g: &mut Graph, p: &LstmParams, x: Var, s: &LstmState) -> Result<LstmState> {
    if g.value(x).len() != p.input || g.value(s.h).len() != p.hidden {
        return shape_err(
            "lstm_step",
            format!(
                "input {:?} / hidden {:?} for a cell of input {} and hidden {}",
                g.value(x).shape(),
                g.value(s.h).shape(),
                p.input,
                p.hidden
            ),
        );
    }
    let (w_ih, w_hh, b) = (g.param(p.w_ih), g.param(p.w_hh), g.param(p.bias));
    let from_x = g.linear(x, w_ih, Some(b))?;
    let from_h = g.linear(s.h, w_hh, None)?;
    let pre = g.add(from_x, from_h)?;
    finish_step(g, p, pre, s)
}

/// Runs one direction over a sequence whose input projection `x W_ih^T + b`
/// has already been computed for every frame. Returns hidden states in time
/// order, and the final state in processing order.
fn run_direction(g: &mut Graph, p: &LstmParams, projected: Var, reverse: bool) -> Result<(Vec<Var>, LstmState)> {
    let t_len = g.value(projected).rows();
    let w_hh = g.param(p.w_hh);
    let mut s = LstmState::zeros(g, p.hidden);
    let mut hs = vec![None; t_len];
    let order: Vec<usize> = if reverse {
        (0..t_len).rev().collect()
    } else {
        (0..t_len).collect()
    };
    for t in order {
        let xt = g.row(projected, t)?;
        let from_h = g.linear(s.h, w_hh, None)?;
        let pre = g.add(xt, from_h)?;
        s = finish_step(g, p, pre, &s)?;
        hs[t] = Some(s.h);
    }
    Ok((hs.into_iter().map(Option::unwrap).collect(), s))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub num_layers: usize,
    /// Hidden size of each direction.
    pub hidden: usize,
    /// 1-based layer indices after which every other frame is dropped.
    pub subsample_after: Vec<usize>,
    pub projection_dim: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden == 0 || self.input_dim == 0 || self.projection_dim == 0 {
            return arg_err("encoder config", "dimensions and layer count must be positive");
        }
        if let Some(bad) = self.subsample_after.iter().find(|&&l| l == 0 || l > self.num_layers) {
            return arg_err(
                "encoder config",
                format!("subsample layer {bad} outside 1..={}", self.num_layers),
            );
        }
        Ok(())
    }

    /// Output length for `frames` input frames.
    pub fn output_len(&self, frames: usize) -> usize {
        let mut t = frames;
        for l in 1..=self.num_layers {
            if self.subsample_after.contains(&l) {
                t = t.div_ceil(2);
            }
        }
        t
    }
}

/// Stack of bidirectional LSTM layers, optionally followed by a projection.
#[derive(Clone, Debug)]
pub struct BlstmStack {
    pub layers: Vec<(LstmParams, LstmParams)>,
    pub subsample_after: Vec<usize>,
    pub projection: Option<(ParamId, ParamId)>,
    pub hidden: usize,
}

/// Output of a [`BlstmStack`] run.
pub struct BlstmOutput {
    /// `[T' x out]`: projected if the stack has a projection, else `[T' x 2h]`.
    pub frames: Var,
    /// Last layer forward direction after the final frame.
    pub forward_final: Var,
    /// Last layer backward direction after the first frame.
    pub backward_final: Var,
}

impl BlstmStack {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        num_layers: usize,
        subsample_after: Vec<usize>,
        projection_dim: Option<usize>,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let inp = if l == 0 { input_dim } else { 2 * hidden };
            let fwd = LstmParams::register(store, &format!("{prefix}.l{l}.fwd"), inp, hidden, rng);
            let bwd = LstmParams::register(store, &format!("{prefix}.l{l}.bwd"), inp, hidden, rng);
            layers.push((fwd, bwd));
        }
        let projection = projection_dim.map(|d| {
            (
                store.add_uniform(format!("{prefix}.proj.w"), &[d, 2 * hidden], rng),
                store.add_zeros(format!("{prefix}.proj.b"), &[d]),
            )
        });
        Self {
            layers,
            subsample_after,
            projection,
            hidden,
        }
    }

    pub fn from_config<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, rng: &mut R) -> Self {
        Self::register(
            store,
            prefix,
            cfg.input_dim,
            cfg.hidden,
            cfg.num_layers,
            cfg.subsample_after.clone(),
            Some(cfg.projection_dim),
            rng,
        )
    }

    /// Runs the stack over `x: [T x F]`.
    pub fn run(&self, g: &mut Graph, x: Var) -> Result<BlstmOutput> {
        let xv = g.value(x);
        if xv.shape().len() != 2 {
            return shape_err("blstm", format!("input must be [T x F], got {:?}", xv.shape()));
        }
        if xv.rows() == 0 {
            return Err(Error::Empty("blstm"));
        }
        let mut input = x;
        let mut finals = None;
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            let proj_f = {
                let (w, b) = (g.param(fwd.w_ih), g.param(fwd.bias));
                g.linear(input, w, Some(b))?
            };
            let proj_b = {
                let (w, b) = (g.param(bwd.w_ih), g.param(bwd.bias));
                g.linear(input, w, Some(b))?
            };
            let (hf, sf) = run_direction(g, fwd, proj_f, false)?;
            let (hb, sb) = run_direction(g, bwd, proj_b, true)?;
            let f_mat = g.stack_rows(&hf)?;
            let b_mat = g.stack_rows(&hb)?;
            let mut out = g.concat(&[f_mat, b_mat])?;
            finals = Some((sf.h, sb.h));
            if self.subsample_after.contains(&(l + 1)) {
                let keep: Vec<usize> = (0..g.value(out).rows()).step_by(2).collect();
                out = g.select_rows(out, keep)?;
            }
            input = out;
        }
        let frames = match self.projection {
            Some((w, b)) => {
                let (w, b) = (g.param(w), g.param(b));
                g.linear(input, w, Some(b))?
            }
            None => input,
        };
        let (forward_final, backward_final) = finals.expect("at least one layer");
        Ok(BlstmOutput {
            frames,
            forward_final,
            backward_final,
        })
    }
}

/// Input to the predictor: the start symbol or the last emitted non-blank token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredictorInput {
    Start,
    Token(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub hidden: usize,
    pub output_dim: usize,
}

/// Stacked LSTM over previously emitted tokens with an output projection.
/// Row 0 of the embedding table (the blank id, which is never fed back) holds
/// the start symbol.
#[derive(Clone, Debug)]
pub struct Predictor {
    pub embed: ParamId,
    pub layers: Vec<LstmParams>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub config: PredictorConfig,
}

impl Predictor {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &PredictorConfig, rng: &mut R) -> Self {
        let embed = store.add_uniform(format!("{prefix}.embed"), &[cfg.vocab_size, cfg.embed_dim], rng);
        let layers = (0..cfg.num_layers)
            .map(|l| {
                let inp = if l == 0 { cfg.embed_dim } else { cfg.hidden };
                LstmParams::register(store, &format!("{prefix}.l{l}"), inp, cfg.hidden, rng)
            })
            .collect();
        Self {
            embed,
            layers,
            proj_w: store.add_uniform(format!("{prefix}.proj.w"), &[cfg.output_dim, cfg.hidden], rng),
            proj_b: store.add_zeros(format!("{prefix}.proj.b"), &[cfg.output_dim]),
            config: cfg.clone(),
        }
    }

    fn row_for(&self, input: PredictorInput) -> Result<usize> {
        match input {
            PredictorInput::Start => Ok(BLANK_ID),
            PredictorInput::Token(BLANK_ID) => arg_err(
                "predictor_step",
                "blank cannot be fed to the predictor; it consumes only non-blank units",
            ),
            PredictorInput::Token(CTX_END_ID) => {
                arg_err("predictor_step", "the context terminator is never emitted")
            }
            PredictorInput::Token(id) if id >= self.config.vocab_size => Err(Error::TokenOutOfRange {
                id,
                size: self.config.vocab_size,
            }),
            PredictorInput::Token(id) => Ok(id),
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> Vec<LstmState> {
        (0..self.layers.len()).map(|_| LstmState::zeros(g, self.config.hidden)).collect()
    }

    /// One predictor update; returns the projected output and the new states.
    pub fn step(&self, g: &mut Graph, input: PredictorInput, states: &[LstmState]) -> Result<(Var, Vec<LstmState>)> {
        if states.len() != self.layers.len() {
            return shape_err(
                "predictor_step",
                format!("{} states for {} layers", states.len(), self.layers.len()),
            );
        }
        let row = self.row_for(input)?;
        let table = g.param(self.embed);
        let mut x = g.row(table, row)?;
        let mut next = Vec::with_capacity(states.len());
        for (p, s) in self.layers.iter().zip(states) {
            let s2 = lstm_step(g, p, x, s)?;
            x = s2.h;
            next.push(s2);
        }
        let (w, b) = (g.param(self.proj_w), g.param(self.proj_b));
        let out = g.linear(x, w, Some(b))?;
        Ok((out, next))
    }

    /// Outputs for inputs `[START, y_1, ..., y_U]` from the zero state, as a
    /// `[(U+1) x out]` matrix.
    pub fn teacher_forced(&self, g: &mut Graph, tokens: &[usize]) -> Result<Var> {
        let mut rows = vec![self.row_for(PredictorInput::Start)?];
        for &t in tokens {
            rows.push(self.row_for(PredictorInput::Token(t))?);
        }
        let table = g.param(self.embed);
        let mut input = g.select_rows(table, rows)?;
        for p in &self.layers {
            let (w, b) = (g.param(p.w_ih), g.param(p.bias));
            let proj = g.linear(input, w, Some(b))?;
            let (hs, _) = run_direction(g, p, proj, false)?;
            input = g.stack_rows(&hs)?;
        }
        let (w, b) = (g.param(self.proj_w), g.param(self.proj_b));
        g.linear(input, w, Some(b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub hidden: usize,
}

/// Bidirectional LSTM over a context word's pieces; the word embedding is the
/// concatenated final states of the two directions of the last layer.
#[derive(Clone, Debug)]
pub struct EmbeddingExtractor {
    pub embed: ParamId,
    pub stack: BlstmStack,
    pub config: ExtractorConfig,
}

impl EmbeddingExtractor {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, cfg: &ExtractorConfig, rng: &mut R) -> Self {
        let embed = store.add_uniform(format!("{prefix}.embed"), &[cfg.vocab_size, cfg.embed_dim], rng);
        let stack = BlstmStack::register(
            store,
            prefix,
            cfg.embed_dim,
            cfg.hidden,
            cfg.num_layers,
            Vec::new(),
            None,
            rng,
        );
        Self {
            embed,
            stack,
            config: cfg.clone(),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.config.hidden
    }

    pub fn embed_word(&self, g: &mut Graph, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Empty("embedding_last_state"));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::TokenOutOfRange {
                id: bad,
                size: self.config.vocab_size,
            });
        }
        let table = g.param(self.embed);
        let x = g.select_rows(table, tokens.to_vec())?;
        let out = self.stack.run(g, x)?;
        g.concat(&[out.forward_final, out.backward_final])
    }

    /// Embeddings of several words stacked as `[N x 2h]`.
    pub fn embed_all(&self, g: &mut Graph, words: &[Vec<usize>]) -> Result<Var> {
        let rows = words
            .iter()
            .map(|w| self.embed_word(g, w))
            .collect::<Result<Vec<_>>>()?;
        g.stack_rows(&rows)
    }
}
