//! Oracles used by the test suites. Each check here recomputes a quantity by
//! a route that shares no code with the implementation under test (central
//! differences, path enumeration, prefix scans, rigged scorers) and reports
//! the discrepancy, leaving thresholds to the caller.

pub mod bias;
pub mod decoder;
pub mod fd;
pub mod gradients;
pub mod lattice;

use rand::Rng;

use crnt_core::numerics::Tensor;

/// Tensor of the given shape with entries uniform in `[-scale, scale]`.
pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

use crnt_core::tokenizer::Vocabulary;

/// Letters `a`..`e`, each as a word-initial and as a word-internal piece.
pub fn letter_vocabulary() -> Vocabulary {
    let letters = ["a", "b", "c", "d", "e"];
    Vocabulary::from_pieces(letters.iter().flat_map(|l| [(*l, true), (*l, false)])).expect("pieces are distinct")
}
