use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnt_core::contextualizer::normalize_metadata;
use crnt_core::eval::{
    align, context_pr, edit_distance, evaluate, pooled_counts, sample_counts, split_common, wer, wer_ne, AlignOp,
    EvalSample,
};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn sample(id: &str, reference: &str, hypothesis: &str, entities: &[&str], metadata: &[&str]) -> EvalSample {
    let reference = words(reference);
    EvalSample {
        utterance_id: id.into(),
        video_id: "v".into(),
        entity_flags: reference.iter().map(|w| entities.contains(&w.as_str())).collect(),
        reference,
        hypothesis: words(hypothesis),
        metadata_words: metadata.iter().map(|s| s.to_string()).collect(),
    }
}

/// Top-down recursive edit distance with a memo table.
fn oracle_distance(a: &[String], b: &[String]) -> usize {
    fn go(a: &[String], b: &[String], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let d = (go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]))
            .min(go(a, b, i + 1, j, memo) + 1)
            .min(go(a, b, i, j + 1, memo) + 1);
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

fn random_words(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let n = rng.random_range(0..=max_len);
    (0..n).map(|_| ["a", "b", "c", "d"][rng.random_range(0..4)].to_string()).collect()
}

/// Checks that `ops` walks both sequences in order and labels pairs correctly.
fn assert_valid_alignment(r: &[String], h: &[String], ops: &[AlignOp]) {
    let (mut i, mut j) = (0, 0);
    for op in ops {
        match *op {
            AlignOp::Match(a, b) => {
                assert_eq!((a, b), (i, j));
                assert_eq!(r[a], h[b]);
                i += 1;
                j += 1;
            }
            AlignOp::Sub(a, b) => {
                assert_eq!((a, b), (i, j));
                assert_ne!(r[a], h[b]);
                i += 1;
                j += 1;
            }
            AlignOp::Del(a) => {
                assert_eq!(a, i);
                i += 1;
            }
            AlignOp::Ins(b) => {
                assert_eq!(b, j);
                j += 1;
            }
        }
    }
    assert_eq!((i, j), (r.len(), h.len()));
}

#[test]
fn alignment_distance_matches_recursive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let r = random_words(&mut rng, 9);
        let h = random_words(&mut rng, 9);
        let ops = align(&r, &h);
        assert_valid_alignment(&r, &h, &ops);
        assert_eq!(edit_distance(&ops), oracle_distance(&r, &h), "{r:?} vs {h:?}");
    }
}

#[test]
fn alignment_examples() {
    let ops = align(&words("a b c"), &words("a b c"));
    assert!(ops.iter().all(|o| matches!(o, AlignOp::Match(..))));
    assert_eq!(align(&words("a b c"), &words("a x c")), [AlignOp::Match(0, 0), AlignOp::Sub(1, 1), AlignOp::Match(2, 2)]);
    // Equal-cost choices resolve to substitution before deletion or insertion.
    assert_eq!(align(&words("a"), &words("b")), [AlignOp::Sub(0, 0)]);
    assert_eq!(align(&words("a b"), &words("b")), [AlignOp::Del(0), AlignOp::Match(1, 0)]);
    assert_eq!(align::<String>(&[], &words("x y")), [AlignOp::Ins(0), AlignOp::Ins(1)]);
}

#[test]
fn confusable_entity_counts() {
    let s = sample("u", "meet Sean today", "meet Shaun today", &["Sean"], &[]);
    assert!((wer(std::slice::from_ref(&s)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(wer_ne(std::slice::from_ref(&s)), Some(1.0));

    let perfect = sample("p", "meet Sean today", "meet Sean today", &["Sean"], &["Sean"]);
    assert_eq!(wer(std::slice::from_ref(&perfect)), Some(0.0));
    assert_eq!(wer_ne(std::slice::from_ref(&perfect)), Some(0.0));
    assert_eq!(context_pr(std::slice::from_ref(&perfect)), (Some(1.0), Some(1.0)));
}

#[test]
fn rates_are_pooled_over_the_corpus() {
    let a = sample("a", "x", "y", &["x"], &[]);
    let b = sample("b", "p q r s", "p q r s", &["s"], &[]);
    let both = [a, b];
    // 1 error over 5 words, not the mean of 1 and 0.
    assert_eq!(wer(&both), Some(0.2));
    assert_eq!(wer_ne(&both), Some(0.5));
}

#[test]
fn undefined_rates_are_absent() {
    let s = sample("u", "hello there", "hello", &[], &[]);
    assert_eq!(wer_ne(std::slice::from_ref(&s)), None);
    assert_eq!(context_pr(std::slice::from_ref(&s)), (None, None));
    assert_eq!(wer(&[]), None);
    // Insertions never count against entity words.
    let s = sample("u", "Sean", "Sean extra words", &["Sean"], &[]);
    assert_eq!(wer_ne(std::slice::from_ref(&s)), Some(0.0));
    assert_eq!(wer(std::slice::from_ref(&s)), Some(2.0));
}

#[test]
fn context_words_respect_case_and_lowercase_variants() {
    let plain = sample("u", "the Android app", "the android app", &[], &["Android"]);
    let c = sample_counts(&plain);
    assert_eq!((c.context_tp, c.context_fp, c.context_fn), (0, 0, 1));

    let meta = normalize_metadata(&["Android".to_string()]);
    assert_eq!(meta, ["Android", "android"]);
    let lowered = sample("u", "the android app", "the android app", &[], &["Android", "android"]);
    assert_eq!(context_pr(std::slice::from_ref(&lowered)), (Some(1.0), Some(1.0)));

    // A wrong metadata word in the hypothesis is a false positive.
    let wrong = sample("u", "use Pytorch now", "use Android now", &[], &["Pytorch", "Android"]);
    let c = sample_counts(&wrong);
    assert_eq!((c.context_tp, c.context_fp, c.context_fn), (0, 1, 1));
    let inserted = sample("u", "use it", "use Android it", &[], &["Android"]);
    assert_eq!(sample_counts(&inserted).context_fp, 1);
}

#[test]
fn split_examples() {
    let samples = vec![
        sample("empty", "learn PyTorch", "learn PyTorch", &[], &[]),
        sample("exact", "learn PyTorch", "learn PyTorch", &[], &["PyTorch"]),
        sample("lower", "learn pytorch", "learn pytorch", &[], &["PyTorch", "pytorch"]),
        sample("none", "learn cooking", "learn cooking", &[], &["PyTorch", "pytorch"]),
    ];
    let (nonzero, zero) = split_common(&samples);
    let ids = |v: &[EvalSample]| v.iter().map(|s| s.utterance_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&nonzero), ["exact", "lower"]);
    assert_eq!(ids(&zero), ["empty", "none"]);

    let rep = evaluate(&samples);
    assert_eq!(rep.all.utterances, 4);
    assert_eq!(rep.common_non_zero.utterances, 2);
    assert_eq!(rep.common_zero.split, "common_zero");
}

fn arb_words(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "Ana", "Ann"]), 0..max)
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

fn arb_sample() -> impl Strategy<Value = EvalSample> {
    (arb_words(8), arb_words(8), any::<u64>(), prop::sample::subsequence(vec!["a", "Ana", "Ann", "z"], 0..4)).prop_map(
        |(reference, hypothesis, flags, meta)| EvalSample {
            utterance_id: format!("{flags:x}"),
            video_id: String::new(),
            entity_flags: (0..reference.len()).map(|i| flags >> (i % 64) & 1 == 1).collect(),
            reference,
            hypothesis,
            metadata_words: meta.into_iter().map(str::to_string).collect(),
        },
    )
}

proptest! {
    #[test]
    fn swapping_sides_exchanges_insertions_and_deletions(s in arb_sample()) {
        let fwd = sample_counts(&s);
        let swapped = EvalSample {
            entity_flags: vec![false; s.hypothesis.len()],
            reference: s.hypothesis.clone(),
            hypothesis: s.reference.clone(),
            ..s.clone()
        };
        let back = sample_counts(&swapped);
        prop_assert_eq!(fwd.substitutions + fwd.deletions + fwd.insertions,
                        back.substitutions + back.deletions + back.insertions);
        // Co-optimal alignments may trade two substitutions for an insertion
        // and a deletion, so only the difference is fixed.
        prop_assert_eq!(fwd.insertions as i64 - fwd.deletions as i64,
                        back.deletions as i64 - back.insertions as i64);
        prop_assert_eq!(fwd.insertions as i64 - fwd.deletions as i64,
                        s.hypothesis.len() as i64 - s.reference.len() as i64);
    }

    #[test]
    fn entity_rate_is_bounded(samples in prop::collection::vec(arb_sample(), 1..6)) {
        let c = pooled_counts(&samples);
        prop_assert!(c.entity_substitutions + c.entity_deletions <= c.entity_words);
        if let Some(r) = c.wer_ne() {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn every_metadata_occurrence_is_hit_or_missed(s in arb_sample()) {
        let c = sample_counts(&s);
        let occurrences = s.reference.iter().filter(|w| s.metadata_words.contains(w)).count();
        prop_assert_eq!(c.context_tp + c.context_fn, occurrences);
    }

    #[test]
    fn split_is_a_stable_partition(samples in prop::collection::vec(arb_sample(), 0..8), seed in any::<u64>()) {
        let (nz, z) = split_common(&samples);
        prop_assert_eq!(nz.len() + z.len(), samples.len());
        let mut shuffled = samples.clone();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
        let (nz2, _) = split_common(&shuffled);
        let key = |v: &[EvalSample]| {
            let mut k: Vec<(Vec<String>, Vec<String>)> =
                v.iter().map(|s| (s.reference.clone(), s.metadata_words.clone())).collect();
            k.sort();
            k
        };
        prop_assert_eq!(key(&nz), key(&nz2));
    }
}
