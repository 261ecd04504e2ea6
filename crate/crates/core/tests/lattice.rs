use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crnt_core::numerics::kernels::log_softmax_row;
use crnt_core::rnnt::{rnnt_bruteforce, rnnt_loss, BRUTEFORCE_MAX_NODES};
use crnt_testkit::lattice::{oracle_agreement, path_count, random_instance};
use crnt_testkit::uniform;

fn log_probs(logits: &[f64], vocab: usize) -> Vec<Vec<f64>> {
    logits.chunks(vocab).map(log_softmax_row).collect()
}

#[test]
fn agrees_with_path_enumeration() {
    let rep = oracle_agreement(200, 17).unwrap();
    assert!(rep.max_nll_diff < 1e-10, "{rep:?}");
    assert!(rep.max_occupancy_dev < 1e-8, "{rep:?}");
    assert_eq!(rep.path_count_mismatches, 0);
}

#[test]
fn without_labels_only_blanks_are_emitted() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for frames in 1..=5 {
        let logits = uniform(&mut rng, &[frames * 4], 2.0).into_data();
        let lp = log_probs(&logits, 4);
        let want: f64 = -lp.iter().map(|row| row[0]).sum::<f64>();
        let out = rnnt_loss(&logits, frames, 4, &[]).unwrap();
        assert!((out.nll - want).abs() < 1e-12);
        let bf = rnnt_bruteforce(&logits, frames, 4, &[]).unwrap();
        assert_eq!(bf.paths, 1);
    }
}

#[test]
fn two_frames_one_label_has_two_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (vocab, y) = (3, 2);
    let logits = uniform(&mut rng, &[2 * 2 * vocab], 2.0).into_data();
    let p: Vec<Vec<f64>> = log_probs(&logits, vocab)
        .into_iter()
        .map(|r| r.into_iter().map(f64::exp).collect())
        .collect();
    // Row (t, u) sits at index t * 2 + u.
    let node = |t: usize, u: usize| &p[t * 2 + u];
    let prob = node(0, 0)[y] * node(0, 1)[0] * node(1, 1)[0] + node(0, 0)[0] * node(1, 0)[y] * node(1, 1)[0];
    let out = rnnt_loss(&logits, 2, vocab, &[y]).unwrap();
    assert!((out.nll + prob.ln()).abs() < 1e-12);
}

#[test]
fn path_counts_follow_pascal() {
    let logits = vec![0.0; 3 * 3 * 4];
    assert_eq!(rnnt_bruteforce(&logits, 3, 4, &[1, 2]).unwrap().paths, 6);
    assert_eq!(path_count(3, 2), 6);
}

#[test]
fn bruteforce_rejects_large_lattices() {
    let frames = BRUTEFORCE_MAX_NODES + 1;
    assert!(rnnt_bruteforce(&vec![0.0; frames * 2], frames, 2, &[]).is_err());
}

#[test]
fn rejects_bad_inputs() {
    assert!(rnnt_loss(&[], 0, 3, &[]).is_err());
    assert!(rnnt_loss(&[0.0; 6], 2, 3, &[0]).is_err());
    assert!(rnnt_loss(&[0.0; 12], 2, 3, &[3]).is_err());
    assert!(rnnt_loss(&[0.0; 5], 2, 3, &[]).is_err());
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for _ in 0..20 {
        let inst = random_instance(&mut rng);
        let out = rnnt_loss(&inst.logits, inst.frames, inst.vocab, &inst.targets).unwrap();
        let mut x = inst.logits.clone();
        for j in 0..x.len() {
            let x0 = x[j];
            x[j] = x0 + h;
            let plus = rnnt_loss(&x, inst.frames, inst.vocab, &inst.targets).unwrap().nll;
            x[j] = x0 - h;
            let minus = rnnt_loss(&x, inst.frames, inst.vocab, &inst.targets).unwrap().nll;
            x[j] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = out.grad_logits[j];
            assert!((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6) < 1e-4);
        }
    }
}

#[test]
fn forward_table_starts_at_zero_and_stays_nonpositive() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let inst = random_instance(&mut rng);
        let t = rnnt_loss(&inst.logits, inst.frames, inst.vocab, &inst.targets).unwrap().tables;
        assert_eq!(t.alpha(0, 0), 0.0);
        assert!(t.log_alpha.iter().chain(&t.log_beta).all(|&x| x <= 1e-12));
        assert!((t.log_likelihood() + rnnt_loss(&inst.logits, inst.frames, inst.vocab, &inst.targets).unwrap().nll).abs() < 1e-12);
    }
}

/// All label sequences of length at most `max_len` over units `1..vocab`.
fn sequences(vocab: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for k in 1..vocab {
                let mut t: Vec<usize> = s.clone();
                t.push(k);
                next.push(t);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

#[test]
fn label_sequences_are_subnormalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (frames, vocab) = (2, 3);
    for _ in 0..10 {
        // One distribution per (t, u) node, shared by every label sequence:
        // build the largest lattice and take prefixes of its rows.
        let per_node = uniform(&mut rng, &[frames, 4, vocab], 2.0);
        let total: f64 = sequences(vocab, 3)
            .iter()
            .map(|y| {
                let u = y.len();
                let mut logits = Vec::with_capacity(frames * (u + 1) * vocab);
                for t in 0..frames {
                    for uu in 0..=u {
                        let start = (t * 4 + uu) * vocab;
                        logits.extend_from_slice(&per_node.data()[start..start + vocab]);
                    }
                }
                (-rnnt_loss(&logits, frames, vocab, y).unwrap().nll).exp()
            })
            .sum();
        assert!(total <= 1.0 + 1e-9, "{total}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabeling_units_leaves_loss_unchanged(seed in any::<u64>(), rot in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng);
        let v = inst.vocab;
        // Cyclic relabeling of the non-blank units.
        let map = |k: usize| if k == 0 { 0 } else { 1 + (k - 1 + rot) % (v - 1) };
        let mut logits = vec![0.0; inst.logits.len()];
        for (row_in, row_out) in inst.logits.chunks(v).zip(logits.chunks_mut(v)) {
            for k in 0..v {
                row_out[map(k)] = row_in[k];
            }
        }
        let targets: Vec<usize> = inst.targets.iter().map(|&k| map(k)).collect();
        let a = rnnt_loss(&inst.logits, inst.frames, v, &inst.targets).unwrap().nll;
        let b = rnnt_loss(&logits, inst.frames, v, &targets).unwrap().nll;
        prop_assert!((a - b).abs() < 1e-12);
    }
}
