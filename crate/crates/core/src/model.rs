//! The full contextual transducer: parameter layout, the per-utterance training
//! loss, and the incremental state updates used by the decoders.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::contextualizer::{
    bias_vector, initial_alpha, AttentionConfig, AttentionParams, BiasCursor, BiasWeights, ContextSet,
};
use crate::error::{arg_err, shape_err, Result};
use crate::numerics::kernels::log_softmax_row;
use crate::numerics::{Activation, Graph, ParamStore, Tensor, Var};
use crate::recurrent::{
    BlstmStack, EmbeddingExtractor, EncoderConfig, ExtractorConfig, LstmState, LstmStateValue, Predictor,
    PredictorConfig, PredictorInput,
};
use crate::rnnt::{rnnt_loss, JoinerConfig, JoinerParams, ModelMode};
use crate::tokenizer::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub subsample_after: Vec<usize>,
    pub encoder_dim: usize,
    pub predictor_embed: usize,
    pub predictor_layers: usize,
    pub predictor_hidden: usize,
    pub predictor_dim: usize,
    pub extractor_embed: usize,
    pub extractor_layers: usize,
    pub extractor_hidden: usize,
    pub att_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub joint_dim: usize,
    pub activation: Activation,
    pub bias_dropout: f64,
    pub bias_at_word_start: bool,
}

impl ModelConfig {
    /// Small dimensions used for tests and the desk preset's shape.
    pub fn tiny(mode: ModelMode, vocab_size: usize, feature_dim: usize) -> Self {
        Self {
            mode,
            vocab_size,
            feature_dim,
            encoder_layers: 1,
            encoder_hidden: 3,
            subsample_after: vec![],
            encoder_dim: 4,
            predictor_embed: 3,
            predictor_layers: 1,
            predictor_hidden: 3,
            predictor_dim: 4,
            extractor_embed: 3,
            extractor_layers: 1,
            extractor_hidden: 2,
            att_dim: 3,
            conv_channels: 2,
            conv_kernel: 1,
            joint_dim: 5,
            activation: Activation::Tanh,
            bias_dropout: 0.0,
            bias_at_word_start: false,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            input_dim: self.feature_dim,
            num_layers: self.encoder_layers,
            hidden: self.encoder_hidden,
            subsample_after: self.subsample_after.clone(),
            projection_dim: self.encoder_dim,
        }
    }

    pub fn predictor(&self) -> PredictorConfig {
        PredictorConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.predictor_embed,
            num_layers: self.predictor_layers,
            hidden: self.predictor_hidden,
            output_dim: self.predictor_dim,
        }
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            vocab_size: self.vocab_size,
            embed_dim: self.extractor_embed,
            num_layers: self.extractor_layers,
            hidden: self.extractor_hidden,
        }
    }

    pub fn context_dim(&self) -> usize {
        2 * self.extractor_hidden
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            pred_dim: self.predictor_dim,
            embed_dim: self.context_dim(),
            att_dim: self.att_dim,
            conv_channels: self.conv_channels,
            conv_kernel: self.conv_kernel,
        }
    }

    pub fn joiner(&self) -> JoinerConfig {
        JoinerConfig {
            enc_dim: self.encoder_dim,
            pred_dim: self.predictor_dim,
            context_dim: self.context_dim(),
            joint_dim: self.joint_dim,
            vocab_size: self.vocab_size,
            activation: self.activation,
            bias_dropout: self.bias_dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        let dims = [
            self.vocab_size,
            self.predictor_embed,
            self.predictor_layers,
            self.predictor_hidden,
            self.predictor_dim,
            self.extractor_embed,
            self.extractor_layers,
            self.extractor_hidden,
            self.att_dim,
            self.conv_channels,
            self.joint_dim,
        ];
        if dims.contains(&0) {
            return arg_err("model config", "dimensions and layer counts must be positive");
        }
        if self.vocab_size < 3 {
            return arg_err("model config", "vocabulary needs blank, terminator and one piece");
        }
        Ok(())
    }
}

/// Module layout of a model. Parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: BlstmStack,
    pub predictor: Predictor,
    /// Present in the attention modes.
    pub extractor: Option<EmbeddingExtractor>,
    pub attention: Option<AttentionParams>,
    pub joiner: JoinerParams,
}

/// Context-word inputs of one utterance for inference.
pub struct ContextInputs<'c> {
    pub set: &'c ContextSet,
    /// `[N x 2h]` embeddings and their attention projection, when attention
    /// is used and `N > 0`.
    embeddings: Option<(Tensor, Tensor)>,
}

impl ContextInputs<'_> {
    pub fn embeddings(&self) -> Option<&Tensor> {
        self.embeddings.as_ref().map(|(e, _)| e)
    }
}

/// Everything the decoder carries per hypothesis for the current label
/// position `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct HypState {
    pub pred_states: Vec<LstmStateValue>,
    pub h_pred: Tensor,
    /// Attention weights at this position (attention modes with `N > 0`).
    pub alpha: Option<Tensor>,
    pub context: Option<Tensor>,
    pub bias: Option<Tensor>,
    pub cursor: BiasCursor,
    /// `V [c_u; h_pred] + bias_proj b_u + b`, shared by every frame.
    pub joint_pred: Tensor,
}

/// Output of the training forward pass for one utterance.
pub struct UtteranceLoss {
    pub loss: Var,
    pub nll: f64,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mode = config.mode;
        let encoder = BlstmStack::from_config(store, "encoder", &config.encoder(), rng);
        let predictor = Predictor::register(store, "predictor", &config.predictor(), rng);
        let (extractor, attention) = if mode.uses_attention() {
            (
                Some(EmbeddingExtractor::register(store, "extractor", &config.extractor(), rng)),
                Some(AttentionParams::register(store, "attention", &config.attention(), rng)?),
            )
        } else {
            (None, None)
        };
        let joiner = JoinerParams::register(store, "joiner", mode, &config.joiner(), rng)?;
        Ok(Self {
            config,
            encoder,
            predictor,
            extractor,
            attention,
            joiner,
        })
    }

    pub fn mode(&self) -> ModelMode {
        self.config.mode
    }

    fn check_features(&self, features: &Tensor) -> Result<()> {
        if features.shape().len() != 2 || features.cols() != self.config.feature_dim {
            return shape_err(
                "model",
                format!(
                    "features {:?} for feature dimension {}",
                    features.shape(),
                    self.config.feature_dim
                ),
            );
        }
        Ok(())
    }

    /// Negative log-likelihood of `targets` given `features` and the context
    /// words, recorded on `g` for backpropagation.
    #[allow(clippy::too_many_arguments)]
    pub fn utterance_loss<R: Rng>(
        &self,
        g: &mut Graph,
        features: &Tensor,
        targets: &[usize],
        ctx: &ContextSet,
        vocab: &Vocabulary,
        training: bool,
        rng: &mut R,
    ) -> Result<UtteranceLoss> {
        self.check_features(features)?;
        let mode = self.mode();
        let x = g.constant(features.clone());
        let enc = self.encoder.run(g, x)?.frames;
        let frames = g.value(enc).rows();
        let h_pred = self.predictor.teacher_forced(g, targets)?;
        let positions = targets.len() + 1;

        let mut alphas: Vec<Option<Var>> = vec![None; positions];
        let mut context = None;
        if mode.uses_attention() {
            let ctx_dim = self.config.context_dim();
            if ctx.is_empty() {
                context = Some(g.constant(Tensor::zeros(&[positions, ctx_dim])));
            } else {
                let att = self.attention.as_ref().expect("attention modes register attention");
                let emb = self.extractor.as_ref().expect("attention modes register the extractor");
                let e = emb.embed_all(g, &ctx.token_seqs())?;
                let projected = att.project_embeddings(g, e)?;
                let mut prev = g.constant(initial_alpha(ctx.len()));
                let mut rows = Vec::with_capacity(positions);
                for (u, slot) in alphas.iter_mut().enumerate() {
                    let h = g.row(h_pred, u)?;
                    let a = att.step(g, h, projected, prev)?;
                    rows.push(g.weighted_sum(a, e)?);
                    *slot = Some(a);
                    prev = a;
                }
                context = Some(g.stack_rows(&rows)?);
            }
        }

        let mut bias = None;
        if mode.uses_bias() {
            let vocab_size = self.config.vocab_size;
            let mut cursor = BiasCursor::start();
            let mut rows = Vec::with_capacity(positions);
            for u in 0..positions {
                let entries = ctx.trie().entries(&cursor, self.config.bias_at_word_start);
                let row = match alphas[u] {
                    Some(a) if mode.uses_attention() => g.scatter(a, entries, vocab_size)?,
                    _ => {
                        let b = bias_vector(
                            &cursor,
                            BiasWeights::Ones,
                            ctx.trie(),
                            vocab_size,
                            self.config.bias_at_word_start,
                        );
                        g.constant(Tensor::vector(b))
                    }
                };
                rows.push(row);
                if u < targets.len() {
                    cursor = cursor.advance(targets[u], vocab, ctx.trie());
                }
            }
            bias = Some(g.stack_rows(&rows)?);
        }

        let enc_part = self.joiner.encoder_part(g, enc)?;
        let pred_part = self.joiner.prediction_part(g, h_pred, context, bias, training, rng)?;
        let logits = self.joiner.lattice_logits(g, enc_part, pred_part)?;
        let out = rnnt_loss(g.value(logits).data(), frames, self.config.vocab_size, targets)?;
        let loss = g.external_loss(logits, out.nll, out.grad_logits)?;
        Ok(UtteranceLoss { loss, nll: out.nll })
    }

    /// `U h_enc` for every encoder frame, `[T' x j]`.
    pub fn encode(&self, store: &ParamStore, features: &Tensor) -> Result<Tensor> {
        self.check_features(features)?;
        let mut g = Graph::new(store);
        let x = g.constant(features.clone());
        let enc = self.encoder.run(&mut g, x)?.frames;
        let part = self.joiner.encoder_part(&mut g, enc)?;
        Ok(g.value(part).clone())
    }

    /// Embeds the context words once per utterance.
    pub fn prepare_context<'c>(&self, store: &ParamStore, set: &'c ContextSet) -> Result<ContextInputs<'c>> {
        let embeddings = match (&self.extractor, &self.attention) {
            (Some(emb), Some(att)) if !set.is_empty() => {
                let mut g = Graph::new(store);
                let e = emb.embed_all(&mut g, &set.token_seqs())?;
                let p = att.project_embeddings(&mut g, e)?;
                Some((g.value(e).clone(), g.value(p).clone()))
            }
            _ => None,
        };
        Ok(ContextInputs { set, embeddings })
    }

    /// State before anything has been emitted.
    pub fn initial_state(&self, store: &ParamStore, ctx: &ContextInputs) -> Result<HypState> {
        let mut g = Graph::new(store);
        let zero = self.predictor.zero_state(&mut g);
        let alpha_prev = ctx.embeddings.as_ref().map(|(e, _)| initial_alpha(e.rows()));
        self.step_state(&mut g, PredictorInput::Start, &zero, alpha_prev, BiasCursor::start(), ctx)
    }

    /// State after emitting the non-blank token `token` from `state`.
    pub fn advance(
        &self,
        store: &ParamStore,
        state: &HypState,
        token: usize,
        ctx: &ContextInputs,
        vocab: &Vocabulary,
    ) -> Result<HypState> {
        let mut g = Graph::new(store);
        let prev: Vec<LstmState> = state
            .pred_states
            .iter()
            .map(|v| LstmState::from_values(&mut g, v))
            .collect();
        let cursor = state.cursor.advance(token, vocab, ctx.set.trie());
        self.step_state(&mut g, PredictorInput::Token(token), &prev, state.alpha.clone(), cursor, ctx)
    }

    fn step_state(
        &self,
        g: &mut Graph,
        input: PredictorInput,
        prev: &[LstmState],
        alpha_prev: Option<Tensor>,
        cursor: BiasCursor,
        ctx: &ContextInputs,
    ) -> Result<HypState> {
        let mode = self.mode();
        let (h, states) = self.predictor.step(g, input, prev)?;
        let mut alpha = None;
        let mut context = None;
        if mode.uses_attention() {
            let c = match (&ctx.embeddings, alpha_prev) {
                (Some((e, p)), Some(prev_alpha)) => {
                    let att = self.attention.as_ref().expect("attention modes register attention");
                    let (e, p) = (g.constant(e.clone()), g.constant(p.clone()));
                    let prev_alpha = g.constant(prev_alpha);
                    let a = att.step(g, h, p, prev_alpha)?;
                    alpha = Some(g.value(a).clone());
                    g.weighted_sum(a, e)?
                }
                _ => g.constant(Tensor::zeros(&[self.config.context_dim()])),
            };
            context = Some(c);
        }
        let mut bias = None;
        if mode.uses_bias() {
            let weights = match &alpha {
                Some(a) => BiasWeights::Attention(a.data()),
                None if mode.uses_attention() => BiasWeights::Attention(&[]),
                None => BiasWeights::Ones,
            };
            let b = bias_vector(
                &cursor,
                weights,
                ctx.set.trie(),
                self.config.vocab_size,
                self.config.bias_at_word_start,
            );
            bias = Some(g.constant(Tensor::vector(b)));
        }
        // Dropout is inactive at inference, so this generator is never drawn from.
        let mut no_rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let joint_pred = self.joiner.prediction_part(g, h, context, bias, false, &mut no_rng)?;
        Ok(HypState {
            pred_states: states.iter().map(|s| s.values(g)).collect(),
            h_pred: g.value(h).clone(),
            alpha,
            context: context.map(|c| g.value(c).clone()),
            bias: bias.map(|b| g.value(b).clone()),
            cursor,
            joint_pred: g.value(joint_pred).clone(),
        })
    }

    /// Log output distribution at frame `t` for a hypothesis in `state`.
    pub fn log_probs(&self, store: &ParamStore, enc_part: &Tensor, t: usize, state: &HypState) -> Result<Vec<f64>> {
        let mut g = Graph::new(store);
        let e = g.constant(Tensor::vector(enc_part.row(t).to_vec()));
        let p = g.constant(state.joint_pred.clone());
        let pre = g.add(e, p)?;
        let z = self.config.activation.apply(&mut g, pre);
        let logits = self.joiner.output_logits(&mut g, z)?;
        Ok(log_softmax_row(g.value(logits).data()))
    }
}
