//! Greedy and beam-search decoding with per-hypothesis contextual state, and
//! attention traces for inspecting which context word each emission attended.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::contextualizer::ContextSet;
use crate::error::{arg_err, Error, Result};
use crate::model::{ContextInputs, HypState, Model};
use crate::numerics::kernels::log_add_exp;
use crate::numerics::{ParamStore, Tensor};
use crate::tokenizer::{TokenSeq, Vocabulary, BLANK_ID, CTX_END_ID};

pub const DEFAULT_MAX_SYMBOLS_PER_STEP: usize = 5;

/// Marker shown before word-initial pieces in traces.
pub const WORD_START_MARK: char = '\u{2581}';

/// Attention weights per emitted unit (rows) over context words (columns).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttentionTrace {
    pub words: Vec<String>,
    pub pieces: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl AttentionTrace {
    pub fn new(words: Vec<String>) -> Self {
        Self {
            words,
            pieces: Vec::new(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, piece: String, alpha: Option<&Tensor>) {
        self.pieces.push(piece);
        self.rows.push(alpha.map(|a| a.data().to_vec()).unwrap_or_default());
    }

    /// Column of the largest weight in row `r`, if there are any columns.
    pub fn row_argmax(&self, r: usize) -> Option<usize> {
        let row = &self.rows[r];
        (0..row.len()).reduce(|best, i| if row[i] > row[best] { i } else { best })
    }
}

/// Display form of a piece: word-initial pieces carry [`WORD_START_MARK`].
pub fn piece_label(vocab: &Vocabulary, id: usize) -> String {
    let p = vocab.piece(id);
    if p.word_initial {
        format!("{WORD_START_MARK}{}", p.text)
    } else {
        p.text.clone()
    }
}

/// A decoded token sequence with its log score.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub tokens: TokenSeq,
    pub log_score: f64,
    pub trace: AttentionTrace,
}

/// Index of the largest entry among emittable units; ties go to the lowest
/// index, so blank (id 0) wins any tie it is part of. The context terminator
/// is never emitted.
fn argmax(v: &[f64]) -> usize {
    let mut best = BLANK_ID;
    for (k, &x) in v.iter().enumerate().skip(CTX_END_ID + 1) {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// What the search procedures need from a transducer: per-frame output
/// distributions for a decoder state, and the state after an emission.
pub trait Scorer {
    type State: Clone;

    fn frames(&self) -> usize;
    fn initial(&self) -> Result<Self::State>;
    fn log_probs(&self, t: usize, state: &Self::State) -> Result<Vec<f64>>;
    /// State after emitting the non-blank unit `token`.
    fn advance(&self, state: &Self::State, token: usize) -> Result<Self::State>;
    /// Attention weights held by `state`, if any.
    fn attention(&self, _state: &Self::State) -> Option<Tensor> {
        None
    }
}

/// [`Scorer`] over a trained [`Model`] for one utterance.
pub struct ModelScorer<'a> {
    model: &'a Model,
    store: &'a ParamStore,
    vocab: &'a Vocabulary,
    enc: Tensor,
    ctx: ContextInputs<'a>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        model: &'a Model,
        store: &'a ParamStore,
        vocab: &'a Vocabulary,
        features: &Tensor,
        ctx: &'a ContextSet,
    ) -> Result<Self> {
        if vocab.len() != model.config.vocab_size {
            return arg_err(
                "decode",
                format!("vocabulary of {} for a model of {}", vocab.len(), model.config.vocab_size),
            );
        }
        Ok(Self {
            model,
            store,
            vocab,
            enc: model.encode(store, features)?,
            ctx: model.prepare_context(store, ctx)?,
        })
    }
}

impl Scorer for ModelScorer<'_> {
    type State = HypState;

    fn frames(&self) -> usize {
        self.enc.rows()
    }

    fn initial(&self) -> Result<HypState> {
        self.model.initial_state(self.store, &self.ctx)
    }

    fn log_probs(&self, t: usize, s: &HypState) -> Result<Vec<f64>> {
        self.model.log_probs(self.store, &self.enc, t, s)
    }

    fn advance(&self, s: &HypState, token: usize) -> Result<HypState> {
        self.model.advance(self.store, s, token, &self.ctx, self.vocab)
    }

    fn attention(&self, s: &HypState) -> Option<Tensor> {
        s.alpha.clone()
    }
}

/// Outcome of a search: emitted units, log score, the final decoder state
/// and the attention weights in effect at each emission.
#[derive(Clone, Debug)]
pub struct Hypothesis<S> {
    pub tokens: TokenSeq,
    pub log_score: f64,
    pub state: S,
    pub alphas: Vec<Option<Tensor>>,
    /// Follows the greedy path; kept in the beam at every pruning step.
    anchor: bool,
}

impl<S> Hypothesis<S> {
    fn decoded(&self, vocab: &Vocabulary, ctx: &ContextSet) -> Decoded {
        let mut trace = AttentionTrace::new(ctx.surfaces().iter().map(|w| w.to_string()).collect());
        for (&k, a) in self.tokens.iter().zip(&self.alphas) {
            trace.push(piece_label(vocab, k), a.as_ref());
        }
        Decoded {
            tokens: self.tokens.clone(),
            log_score: self.log_score,
            trace,
        }
    }
}

/// Frame-by-frame argmax search. At most `max_symbols_per_step` non-blank
/// units are emitted per frame; after that a blank is forced.
pub fn greedy_search<M: Scorer>(m: &M, max_symbols_per_step: usize) -> Result<Hypothesis<M::State>> {
    if max_symbols_per_step == 0 {
        return arg_err("greedy_decode", "max_symbols_per_step must be at least 1");
    }
    let mut h = Hypothesis {
        tokens: Vec::new(),
        log_score: 0.0,
        state: m.initial()?,
        alphas: Vec::new(),
        anchor: true,
    };
    for t in 0..m.frames() {
        let mut emitted = 0;
        loop {
            let lp = m.log_probs(t, &h.state)?;
            let k = argmax(&lp);
            if k == BLANK_ID || emitted == max_symbols_per_step {
                h.log_score += lp[BLANK_ID];
                break;
            }
            h.log_score += lp[k];
            h.tokens.push(k);
            h.alphas.push(m.attention(&h.state));
            h.state = m.advance(&h.state, k)?;
            emitted += 1;
        }
    }
    Ok(h)
}

pub fn greedy_decode(
    model: &Model,
    store: &ParamStore,
    vocab: &Vocabulary,
    features: &Tensor,
    ctx: &ContextSet,
    max_symbols_per_step: usize,
) -> Result<Decoded> {
    let m = ModelScorer::new(model, store, vocab, features, ctx)?;
    Ok(greedy_search(&m, max_symbols_per_step)?.decoded(vocab, ctx))
}

struct Candidate {
    parent: usize,
    token: usize,
    score: f64,
    anchor: bool,
}

/// Indices of the `width` best by score (ties by position), with the anchor
/// swapped in for the last slot if it fell outside.
fn select_with_anchor(scores: &[f64], anchor: Option<usize>, width: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(width);
    if let Some(a) = anchor {
        if !order.contains(&a) {
            *order.last_mut().expect("width >= 1") = a;
        }
    }
    order
}

/// Time-synchronous beam search.
///
/// Within a frame, hypotheses are expanded one emission at a time: every live
/// hypothesis proposes a blank (ending its frame) and every non-blank unit, and
/// the best `beam_width` proposals across all hypotheses survive. Hypotheses
/// that end the frame with identical token sequences are merged by adding
/// their probabilities. The hypothesis that makes greedy choices is always
/// retained, so the best result scores at least as well as greedy search and
/// a width of one reproduces it. Results are ranked by log score.
pub fn beam_search_with<M: Scorer>(
    m: &M,
    beam_width: usize,
    max_symbols_per_step: usize,
) -> Result<Vec<Hypothesis<M::State>>> {
    if beam_width == 0 {
        return arg_err("beam_search", "beam width must be at least 1");
    }
    if max_symbols_per_step == 0 {
        return arg_err("beam_search", "max_symbols_per_step must be at least 1");
    }
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        log_score: 0.0,
        state: m.initial()?,
        alphas: Vec::new(),
        anchor: true,
    }];

    for t in 0..m.frames() {
        let mut done: Vec<Hypothesis<M::State>> = Vec::new();
        let mut done_index: HashMap<TokenSeq, usize> = HashMap::new();
        let mut active = beam;
        for emitted in 0..=max_symbols_per_step {
            if active.is_empty() {
                break;
            }
            let forced_blank = emitted == max_symbols_per_step;
            let mut cands = Vec::new();
            for (i, h) in active.iter().enumerate() {
                let lp = m.log_probs(t, &h.state)?;
                let greedy = if forced_blank { BLANK_ID } else { argmax(&lp) };
                let last = if forced_blank { 1 } else { lp.len() };
                for (k, &l) in lp.iter().enumerate().take(last) {
                    if k == CTX_END_ID {
                        continue;
                    }
                    cands.push(Candidate {
                        parent: i,
                        token: k,
                        score: h.log_score + l,
                        anchor: h.anchor && k == greedy,
                    });
                }
            }
            let scores: Vec<f64> = cands.iter().map(|c| c.score).collect();
            let anchor = cands.iter().position(|c| c.anchor);
            let mut next = Vec::new();
            for ci in select_with_anchor(&scores, anchor, beam_width) {
                let c = &cands[ci];
                let parent = &active[c.parent];
                if c.token == BLANK_ID {
                    match done_index.get(&parent.tokens) {
                        Some(&j) => {
                            done[j].log_score = log_add_exp(done[j].log_score, c.score);
                            done[j].anchor |= c.anchor;
                        }
                        None => {
                            let mut h = parent.clone();
                            h.log_score = c.score;
                            h.anchor = c.anchor;
                            done_index.insert(h.tokens.clone(), done.len());
                            done.push(h);
                        }
                    }
                } else {
                    let mut tokens = parent.tokens.clone();
                    tokens.push(c.token);
                    let mut alphas = parent.alphas.clone();
                    alphas.push(m.attention(&parent.state));
                    next.push(Hypothesis {
                        tokens,
                        log_score: c.score,
                        state: m.advance(&parent.state, c.token)?,
                        alphas,
                        anchor: c.anchor,
                    });
                }
            }
            active = next;
        }
        let scores: Vec<f64> = done.iter().map(|h| h.log_score).collect();
        let anchor = done.iter().position(|h| h.anchor);
        let keep = select_with_anchor(&scores, anchor, beam_width);
        let mut slots: Vec<Option<Hypothesis<M::State>>> = done.into_iter().map(Some).collect();
        beam = keep.into_iter().map(|i| slots[i].take().expect("indices are distinct")).collect();
    }

    beam.sort_by(|a, b| b.log_score.total_cmp(&a.log_score));
    Ok(beam)
}

pub fn beam_search(
    model: &Model,
    store: &ParamStore,
    vocab: &Vocabulary,
    features: &Tensor,
    ctx: &ContextSet,
    beam_width: usize,
    max_symbols_per_step: usize,
) -> Result<Vec<Decoded>> {
    let m = ModelScorer::new(model, store, vocab, features, ctx)?;
    let ranked = beam_search_with(&m, beam_width, max_symbols_per_step)?;
    Ok(ranked.iter().map(|h| h.decoded(vocab, ctx)).collect())
}

/// Recomputes the decoder state reached by emitting `tokens` from scratch.
pub fn replay_state(
    model: &Model,
    store: &ParamStore,
    vocab: &Vocabulary,
    ctx: &ContextSet,
    tokens: &[usize],
) -> Result<HypState> {
    let inputs = model.prepare_context(store, ctx)?;
    let mut state = model.initial_state(store, &inputs)?;
    for &k in tokens {
        state = model.advance(store, &state, k, &inputs, vocab)?;
    }
    Ok(state)
}

/// Writes `trace` as CSV: a header of context-word surfaces after a `piece`
/// column, then one row per emitted unit with six decimals.
pub fn dump_attention_trace<W: Write>(trace: &AttentionTrace, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["piece".to_string()];
    header.extend(trace.words.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (piece, row) in trace.pieces.iter().zip(&trace.rows) {
        let mut rec = vec![piece.clone()];
        if row.is_empty() {
            rec.extend(std::iter::repeat_n(String::new(), trace.words.len()));
        } else {
            rec.extend(row.iter().map(|x| format!("{x:.6}")));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trace written by [`dump_attention_trace`].
pub fn parse_attention_trace<R: Read>(source: R) -> Result<AttentionTrace> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("piece") {
        return arg_err("attention trace", "first header column must be `piece`");
    }
    let mut trace = AttentionTrace::new(header.iter().skip(1).map(String::from).collect());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let piece = rec.get(0).unwrap_or_default().to_string();
        let row = rec
            .iter()
            .skip(1)
            .filter(|f| !f.is_empty())
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::InvalidArgument {
                    op: "attention trace",
                    detail: format!("bad weight {f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        trace.pieces.push(piece);
        trace.rows.push(row);
    }
    Ok(trace)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument {
            op: "attention trace",
            detail: format!("{other:?}"),
        },
    }
}
