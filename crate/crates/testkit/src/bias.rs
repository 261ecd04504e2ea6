//! Brute-force prefix-scan oracle for the bias vector.
//!
//! The oracle never builds a trie or a cursor: it re-derives the unfinished
//! word from the whole emission history (everything from the last
//! word-initial piece on) and compares it with every context word's pieces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnt_core::contextualizer::{bias_vector, BiasCursor, BiasTrie, BiasWeights, ContextSet};
use crnt_core::tokenizer::{Vocabulary, BLANK_ID};
use crnt_core::Result;

/// Pieces of the unfinished word at the end of `history`.
pub fn unfinished_word<'h>(history: &'h [usize], vocab: &Vocabulary) -> &'h [usize] {
    let start = history.iter().rposition(|&k| vocab.is_word_initial(k)).unwrap_or(0);
    &history[start..]
}

/// `b[k]` = summed weight of the words whose pieces extend the unfinished
/// word by `k`; with `at_word_start`, every word also contributes its first
/// piece.
pub fn oracle_bias(
    history: &[usize],
    words: &[Vec<usize>],
    weights: Option<&[f64]>,
    vocab: &Vocabulary,
    at_word_start: bool,
) -> Vec<f64> {
    let weight = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut b = vec![0.0; vocab.len()];
    let partial = unfinished_word(history, vocab);
    if !partial.is_empty() {
        for (i, w) in words.iter().enumerate() {
            if w.len() > partial.len() && w.starts_with(partial) {
                b[w[partial.len()]] += weight(i);
            }
        }
    }
    if at_word_start {
        for (i, w) in words.iter().enumerate() {
            b[w[0]] += weight(i);
        }
    }
    b
}

#[derive(Clone, Debug)]
pub struct Case {
    pub vocab: Vocabulary,
    pub words: Vec<Vec<usize>>,
    pub history: Vec<usize>,
    pub weights: Option<Vec<f64>>,
    pub at_word_start: bool,
}

const LETTERS: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Up to 20 context words of up to 6 pieces over a small random vocabulary,
/// and a history stitched from word prefixes and random pieces so that
/// partial matches are common. Attention weights are multiples of 1/1024 so
/// that sums are exact in any order.
pub fn random_case<R: Rng>(rng: &mut R) -> Case {
    let letters = &LETTERS[..rng.random_range(2..=LETTERS.len())];
    let vocab = Vocabulary::from_pieces(letters.iter().flat_map(|l| [(*l, true), (*l, false)])).expect("distinct");
    let initial: Vec<usize> = (2..vocab.len()).filter(|&k| vocab.is_word_initial(k)).collect();
    let internal: Vec<usize> = (2..vocab.len()).filter(|&k| !vocab.is_word_initial(k)).collect();
    let pick = |rng: &mut R, from: &[usize]| from[rng.random_range(0..from.len())];

    let n = rng.random_range(0..=20);
    let words: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let len = rng.random_range(1..=6);
            let mut w = vec![pick(rng, &initial)];
            w.extend((1..len).map(|_| pick(rng, &internal)));
            w
        })
        .collect();

    let mut history = Vec::new();
    let target_len = rng.random_range(0..=12);
    while history.len() < target_len {
        if !words.is_empty() && rng.random_bool(0.5) {
            let w = &words[rng.random_range(0..words.len())];
            history.extend_from_slice(&w[..rng.random_range(1..=w.len())]);
        } else if rng.random_bool(0.3) {
            history.push(pick(rng, &initial));
        } else {
            history.push(pick(rng, &internal));
        }
    }
    let weights = rng
        .random_bool(0.5)
        .then(|| (0..n).map(|_| rng.random_range(0..=1024) as f64 / 1024.0).collect());
    Case {
        vocab,
        words,
        history,
        weights,
        at_word_start: rng.random_bool(0.25),
    }
}

/// Bias vector from the trie and an incrementally advanced cursor.
pub fn trie_bias(case: &Case) -> Vec<f64> {
    let paths: Vec<&[usize]> = case.words.iter().map(Vec::as_slice).collect();
    let trie = BiasTrie::build(&paths);
    let cursor = case
        .history
        .iter()
        .fold(BiasCursor::start(), |c, &k| c.advance(k, &case.vocab, &trie));
    let weights = match &case.weights {
        Some(w) => BiasWeights::Attention(w),
        None => BiasWeights::Ones,
    };
    bias_vector(&cursor, weights, &trie, case.vocab.len(), case.at_word_start)
}

#[derive(Clone, Debug, Default)]
pub struct BiasReport {
    pub instances: usize,
    pub mismatches: usize,
    /// Instances where some entry was negative or the blank entry nonzero.
    pub invalid: usize,
    pub first_mismatch: Option<String>,
}

pub fn oracle_agreement(instances: usize, seed: u64) -> BiasReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = BiasReport {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let case = random_case(&mut rng);
        let got = trie_bias(&case);
        let want = oracle_bias(
            &case.history,
            &case.words,
            case.weights.as_deref(),
            &case.vocab,
            case.at_word_start,
        );
        if got != want {
            rep.mismatches += 1;
            rep.first_mismatch
                .get_or_insert_with(|| format!("{case:?}: trie {got:?}, oracle {want:?}"));
        }
        if got[BLANK_ID] != 0.0 || got.iter().any(|&x| x < 0.0) {
            rep.invalid += 1;
        }
    }
    rep
}

/// Vocabulary and context words of the worked example in which a speaker
/// says "Africa" and then starts a word with "An" while the metadata holds
/// Android, Antenna and Pytorch.
pub fn android_fixture() -> Result<(Vocabulary, ContextSet)> {
    let vocab = Vocabulary::from_pieces([
        ("the", true),
        ("Af", true),
        ("ri", false),
        ("ca", false),
        ("An", true),
        ("dro", false),
        ("id", false),
        ("ten", false),
        ("na", false),
        ("Py", true),
        ("tor", false),
        ("ch", false),
    ])?;
    let ctx = ContextSet::new(&["Android", "Antenna", "Pytorch"], &vocab);
    Ok((vocab, ctx))
}

/// Active context words after the history "the Africa" and the piece "An".
pub fn android_fixture_active() -> Result<Vec<String>> {
    let (vocab, ctx) = android_fixture()?;
    let mut history = vocab.encode("the Africa")?;
    history.push(vocab.id_of("An", true).expect("fixture piece"));
    let cursor = history
        .iter()
        .fold(BiasCursor::start(), |c, &k| c.advance(k, &vocab, ctx.trie()));
    Ok(ctx.active_words(&cursor).into_iter().map(String::from).collect())
}
