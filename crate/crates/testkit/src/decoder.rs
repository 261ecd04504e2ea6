//! Properties of beam search relative to greedy search, checked on random
//! small models in every mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnt_core::contextualizer::ContextSet;
use crnt_core::decoder::{beam_search_with, greedy_search, replay_state, ModelScorer};
use crnt_core::model::{Model, ModelConfig};
use crnt_core::numerics::{ParamStore, Tensor};
use crnt_core::rnnt::ModelMode;
use crnt_core::tokenizer::Vocabulary;
use crnt_core::Result;

use crate::{letter_vocabulary, uniform};

pub const FEATURE_DIM: usize = 3;

/// A randomly initialized tiny model with its weights scaled up, so that its
/// output distributions are peaked enough to emit non-blank units.
pub fn random_model<R: Rng>(rng: &mut R, mode: ModelMode, vocab: &Vocabulary) -> Result<(Model, ParamStore)> {
    let mut store = ParamStore::new();
    let model = Model::new(ModelConfig::tiny(mode, vocab.len(), FEATURE_DIM), &mut store, rng)?;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let noise = uniform(rng, store.get(id).shape(), 0.5);
        for (x, n) in store.get_mut(id).data_mut().iter_mut().zip(noise.data()) {
            *x = 3.0 * *x + n;
        }
    }
    Ok((model, store))
}

/// Up to four random words over the letter vocabulary.
pub fn random_context<R: Rng>(rng: &mut R, vocab: &Vocabulary) -> ContextSet {
    const LETTERS: &[u8] = b"abcde";
    let words: Vec<String> = (0..rng.random_range(0..=4))
        .map(|_| {
            (0..rng.random_range(1..=4))
                .map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char)
                .collect()
        })
        .collect();
    ContextSet::new(&words, vocab)
}

pub fn random_features<R: Rng>(rng: &mut R) -> Tensor {
    let frames = rng.random_range(3..=6);
    uniform(rng, &[frames, FEATURE_DIM], 1.5)
}

#[derive(Clone, Debug, Default)]
pub struct DecoderReport {
    pub models: usize,
    /// Width-one beam results that differ from greedy search in tokens or score.
    pub beam_one_mismatches: usize,
    /// Models where the best beam result scored below greedy search.
    pub dominance_violations: usize,
    /// Beam hypotheses whose state differs from a replay of their tokens.
    pub replay_mismatches: usize,
    pub hypotheses_replayed: usize,
    pub first_failure: Option<String>,
}

pub const BEAM_WIDTH: usize = 4;
pub const MAX_SYMBOLS: usize = 3;

pub fn properties(models: usize, seed: u64) -> Result<DecoderReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = letter_vocabulary();
    let mut rep = DecoderReport {
        models,
        ..Default::default()
    };
    for i in 0..models {
        let mode = ModelMode::ALL[i % ModelMode::ALL.len()];
        let (model, store) = random_model(&mut rng, mode, &vocab)?;
        let ctx = random_context(&mut rng, &vocab);
        let features = random_features(&mut rng);
        let scorer = ModelScorer::new(&model, &store, &vocab, &features, &ctx)?;

        let greedy = greedy_search(&scorer, MAX_SYMBOLS)?;
        let one = beam_search_with(&scorer, 1, MAX_SYMBOLS)?;
        if one.len() != 1 || one[0].tokens != greedy.tokens || one[0].log_score != greedy.log_score {
            rep.beam_one_mismatches += 1;
            rep.first_failure.get_or_insert_with(|| {
                format!(
                    "model {i} ({mode}): greedy {:?} {} vs width-one beam {:?} {}",
                    greedy.tokens, greedy.log_score, one[0].tokens, one[0].log_score
                )
            });
        }

        let ranked = beam_search_with(&scorer, BEAM_WIDTH, MAX_SYMBOLS)?;
        if ranked[0].log_score < greedy.log_score {
            rep.dominance_violations += 1;
            rep.first_failure.get_or_insert_with(|| {
                format!(
                    "model {i} ({mode}): beam {} below greedy {}",
                    ranked[0].log_score, greedy.log_score
                )
            });
        }
        for h in &ranked {
            rep.hypotheses_replayed += 1;
            if replay_state(&model, &store, &vocab, &ctx, &h.tokens)? != h.state {
                rep.replay_mismatches += 1;
                rep.first_failure
                    .get_or_insert_with(|| format!("model {i} ({mode}): replay of {:?} differs", h.tokens));
            }
        }
    }
    Ok(rep)
}
