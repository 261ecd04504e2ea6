//! Transducer lattice loss.
//!
//! Node `(t, u)` of the `T x (U+1)` lattice has an output distribution over the
//! vocabulary. A blank moves from `(t, u)` to `(t+1, u)`; the label `y_{u+1}`
//! moves from `(t, u)` to `(t, u+1)`. Every path ends with a blank emitted at
//! `(T-1, U)`.

use crate::error::{arg_err, Error, Result};
use crate::numerics::kernels::{log_add_exp, log_softmax_row};
use crate::tokenizer::BLANK_ID;

/// Forward and backward log-probability tables of one utterance.
#[derive(Clone, Debug)]
pub struct LatticeTables {
    pub frames: usize,
    pub labels: usize,
    pub vocab: usize,
    /// `[T x (U+1)]`; `log_alpha[0, 0] == 0`.
    pub log_alpha: Vec<f64>,
    /// `[T x (U+1)]`; `log_beta[0, 0] == log p(Y|X)`.
    pub log_beta: Vec<f64>,
    /// `[T x (U+1) x V]` normalized output distributions.
    pub log_probs: Vec<f64>,
}

impl LatticeTables {
    fn idx(&self, t: usize, u: usize) -> usize {
        t * (self.labels + 1) + u
    }

    pub fn alpha(&self, t: usize, u: usize) -> f64 {
        self.log_alpha[self.idx(t, u)]
    }

    pub fn beta(&self, t: usize, u: usize) -> f64 {
        self.log_beta[self.idx(t, u)]
    }

    pub fn log_prob(&self, t: usize, u: usize, k: usize) -> f64 {
        self.log_probs[self.idx(t, u) * self.vocab + k]
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_beta[0]
    }

    /// Posterior probability that the alignment passes through `(t, u)`.
    pub fn occupancy(&self, t: usize, u: usize) -> f64 {
        (self.alpha(t, u) + self.beta(t, u) - self.log_likelihood()).exp()
    }

    /// Posterior probability of the blank transition out of `(t, u)`.
    pub fn blank_occupancy(&self, t: usize, u: usize) -> f64 {
        let next = if t + 1 < self.frames { self.beta(t + 1, u) } else if u == self.labels { 0.0 } else { f64::NEG_INFINITY };
        (self.alpha(t, u) + self.log_prob(t, u, BLANK_ID) + next - self.log_likelihood()).exp()
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// `-log p(Y|X)`.
    pub nll: f64,
    /// Gradient of `nll` with respect to the unnormalized logits.
    pub grad_logits: Vec<f64>,
    pub tables: LatticeTables,
}

fn check_inputs(logits: &[f64], frames: usize, vocab: usize, targets: &[usize]) -> Result<()> {
    if frames == 0 {
        return Err(Error::Empty("rnnt_loss: zero frames"));
    }
    if vocab < 2 {
        return arg_err("rnnt_loss", format!("vocabulary of size {vocab} has no labels"));
    }
    let nodes = frames * (targets.len() + 1);
    if logits.len() != nodes * vocab {
        return arg_err(
            "rnnt_loss",
            format!("{} logits for {frames} frames x {} label positions x {vocab}", logits.len(), targets.len() + 1),
        );
    }
    if let Some(&bad) = targets.iter().find(|&&y| y == BLANK_ID || y >= vocab) {
        return arg_err("rnnt_loss", format!("target contains invalid label {bad}"));
    }
    Ok(())
}

/// Negative log-likelihood of `targets` and its gradient, for `logits` laid
/// out as `[T x (U+1) x V]` (node `(t, u)` at row `t * (U+1) + u`). Logits are
/// normalized per node with a log-softmax first.
pub fn rnnt_loss(logits: &[f64], frames: usize, vocab: usize, targets: &[usize]) -> Result<LossOutput> {
    check_inputs(logits, frames, vocab, targets)?;
    let labels = targets.len();
    let width = labels + 1;
    let mut log_probs = Vec::with_capacity(logits.len());
    for row in logits.chunks(vocab) {
        log_probs.extend(log_softmax_row(row));
    }
    let lp = |t: usize, u: usize, k: usize| log_probs[(t * width + u) * vocab + k];

    let mut alpha = vec![f64::NEG_INFINITY; frames * width];
    alpha[0] = 0.0;
    for t in 0..frames {
        for u in 0..width {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = f64::NEG_INFINITY;
            if t > 0 {
                a = alpha[(t - 1) * width + u] + lp(t - 1, u, BLANK_ID);
            }
            if u > 0 {
                a = log_add_exp(a, alpha[t * width + u - 1] + lp(t, u - 1, targets[u - 1]));
            }
            alpha[t * width + u] = a;
        }
    }

    let mut beta = vec![f64::NEG_INFINITY; frames * width];
    for t in (0..frames).rev() {
        for u in (0..width).rev() {
            let b = if t == frames - 1 && u == labels {
                lp(t, u, BLANK_ID)
            } else {
                let mut b = f64::NEG_INFINITY;
                if t + 1 < frames {
                    b = beta[(t + 1) * width + u] + lp(t, u, BLANK_ID);
                }
                if u < labels {
                    b = log_add_exp(b, beta[t * width + u + 1] + lp(t, u, targets[u]));
                }
                b
            };
            beta[t * width + u] = b;
        }
    }
    let log_like = beta[0];

    // d nll / d logit[k] = softmax[k] * occupancy(t,u) - P(transition via k)
    let mut grad = vec![0.0; logits.len()];
    for t in 0..frames {
        for u in 0..width {
            let node = t * width + u;
            let a = alpha[node];
            let occ = (a + beta[node] - log_like).exp();
            let row = &mut grad[node * vocab..(node + 1) * vocab];
            if occ > 0.0 {
                for (k, g) in row.iter_mut().enumerate() {
                    *g = lp(t, u, k).exp() * occ;
                }
            }
            let blank_next = if t + 1 < frames {
                beta[(t + 1) * width + u]
            } else if u == labels {
                0.0
            } else {
                f64::NEG_INFINITY
            };
            row[BLANK_ID] -= (a + lp(t, u, BLANK_ID) + blank_next - log_like).exp();
            if u < labels {
                let y = targets[u];
                row[y] -= (a + lp(t, u, y) + beta[node + 1] - log_like).exp();
            }
        }
    }

    Ok(LossOutput {
        nll: -log_like,
        grad_logits: grad,
        tables: LatticeTables {
            frames,
            labels,
            vocab,
            log_alpha: alpha,
            log_beta: beta,
            log_probs,
        },
    })
}

/// Result of explicit path enumeration.
#[derive(Clone, Copy, Debug)]
pub struct BruteForce {
    pub nll: f64,
    pub paths: u64,
}

pub const BRUTEFORCE_MAX_NODES: usize = 20;

/// Test oracle: sums the probabilities of every monotone lattice path in
/// linear space.
pub fn rnnt_bruteforce(logits: &[f64], frames: usize, vocab: usize, targets: &[usize]) -> Result<BruteForce> {
    check_inputs(logits, frames, vocab, targets)?;
    let width = targets.len() + 1;
    if frames * width > BRUTEFORCE_MAX_NODES {
        return arg_err(
            "rnnt_bruteforce",
            format!("lattice of {} nodes exceeds {BRUTEFORCE_MAX_NODES}", frames * width),
        );
    }
    let probs: Vec<Vec<f64>> = logits
        .chunks(vocab)
        .map(|row| log_softmax_row(row).into_iter().map(f64::exp).collect())
        .collect();

    fn walk(
        t: usize,
        u: usize,
        acc: f64,
        probs: &[Vec<f64>],
        frames: usize,
        targets: &[usize],
        total: &mut f64,
        paths: &mut u64,
    ) {
        let width = targets.len() + 1;
        let p = &probs[t * width + u];
        if t == frames - 1 && u == targets.len() {
            *total += acc * p[BLANK_ID];
            *paths += 1;
            return;
        }
        if u < targets.len() {
            walk(t, u + 1, acc * p[targets[u]], probs, frames, targets, total, paths);
        }
        if t + 1 < frames {
            walk(t + 1, u, acc * p[BLANK_ID], probs, frames, targets, total, paths);
        }
    }

    let mut total = 0.0;
    let mut paths = 0;
    walk(0, 0, 1.0, &probs, frames, targets, &mut total, &mut paths);
    Ok(BruteForce {
        nll: -total.ln(),
        paths,
    })
}
