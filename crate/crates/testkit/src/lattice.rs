//! Agreement between the dynamic-programming lattice loss and explicit path
//! enumeration, and the normalization of blank occupancies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnt_core::rnnt::{rnnt_bruteforce, rnnt_loss};
use crnt_core::Result;

use crate::uniform;

/// A random lattice: `frames * (targets.len() + 1)` rows of `vocab` logits.
#[derive(Clone, Debug)]
pub struct Instance {
    pub frames: usize,
    pub vocab: usize,
    pub targets: Vec<usize>,
    pub logits: Vec<f64>,
}

/// Instances with at most 4 frames, 3 labels and 5 units, logits in `[-3, 3]`.
pub fn random_instance<R: Rng>(rng: &mut R) -> Instance {
    let frames = rng.random_range(1..=4);
    let labels = rng.random_range(0..=3);
    let vocab = rng.random_range(2..=5);
    let targets = (0..labels).map(|_| rng.random_range(1..vocab)).collect();
    let logits = uniform(rng, &[frames * (labels + 1) * vocab], 3.0).into_data();
    Instance {
        frames,
        vocab,
        targets,
        logits,
    }
}

/// Number of monotone paths through a `frames x (labels + 1)` lattice ending
/// with a blank from the last node, counted by Pascal's rule: each node is
/// entered from its left or lower neighbour.
pub fn path_count(frames: usize, labels: usize) -> u64 {
    let mut ways = vec![vec![0u64; labels + 1]; frames];
    for t in 0..frames {
        for u in 0..=labels {
            ways[t][u] = if t == 0 && u == 0 {
                1
            } else {
                (if t > 0 { ways[t - 1][u] } else { 0 }) + (if u > 0 { ways[t][u - 1] } else { 0 })
            };
        }
    }
    ways[frames - 1][labels]
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LatticeReport {
    pub instances: usize,
    /// Largest `|nll - nll_enumerated|`.
    pub max_nll_diff: f64,
    /// Largest deviation from 1 of a frame's summed blank occupancy.
    pub max_occupancy_dev: f64,
    /// Instances whose enumerated path count disagrees with [`path_count`].
    pub path_count_mismatches: usize,
}

pub fn oracle_agreement(instances: usize, seed: u64) -> Result<LatticeReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = LatticeReport {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let inst = random_instance(&mut rng);
        let dp = rnnt_loss(&inst.logits, inst.frames, inst.vocab, &inst.targets)?;
        let bf = rnnt_bruteforce(&inst.logits, inst.frames, inst.vocab, &inst.targets)?;
        rep.max_nll_diff = rep.max_nll_diff.max((dp.nll - bf.nll).abs());
        if bf.paths != path_count(inst.frames, inst.targets.len()) {
            rep.path_count_mismatches += 1;
        }
        // Every path leaves each frame by exactly one blank.
        for t in 0..inst.frames {
            let s: f64 = (0..=inst.targets.len()).map(|u| dp.tables.blank_occupancy(t, u)).sum();
            rep.max_occupancy_dev = rep.max_occupancy_dev.max((s - 1.0).abs());
        }
    }
    Ok(rep)
}
