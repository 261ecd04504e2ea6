//! Time and frequency band masking for training-time augmentation.

use rand::Rng;

use crnt_core::numerics::Tensor;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MaskPolicy {
    pub freq_masks: usize,
    pub max_freq_width: usize,
    pub time_masks: usize,
    pub max_time_width: usize,
}

impl MaskPolicy {
    pub fn is_identity(&self) -> bool {
        self.freq_masks == 0 && self.time_masks == 0
    }
}

/// Zeroes `width` consecutive frames starting at `start`.
pub fn mask_time(x: &mut Tensor, start: usize, width: usize) {
    let cols = x.cols();
    let end = (start + width).min(x.rows());
    for v in &mut x.data_mut()[start * cols..end * cols] {
        *v = 0.0;
    }
}

/// Zeroes `width` consecutive feature channels starting at `start`, in every frame.
pub fn mask_freq(x: &mut Tensor, start: usize, width: usize) {
    let cols = x.cols();
    let end = (start + width).min(cols);
    for row in x.data_mut().chunks_mut(cols) {
        for v in &mut row[start..end] {
            *v = 0.0;
        }
    }
}

/// Applies `policy` to `features [T x F]`. Each band has a width drawn
/// uniformly from `0..=max` and a uniformly placed start.
pub fn spec_mask<R: Rng>(features: &Tensor, policy: &MaskPolicy, rng: &mut R) -> Result<Tensor> {
    let (t, f) = (features.rows(), features.cols());
    if policy.freq_masks > 0 && policy.max_freq_width > f {
        return Err(Error::Config(format!(
            "frequency mask width {} exceeds {f} channels",
            policy.max_freq_width
        )));
    }
    let mut x = features.clone();
    for _ in 0..policy.freq_masks {
        let w = rng.random_range(0..=policy.max_freq_width);
        let s = rng.random_range(0..=f - w);
        mask_freq(&mut x, s, w);
    }
    for _ in 0..policy.time_masks {
        // Utterances shorter than the configured width are masked at most whole.
        let w = rng.random_range(0..=policy.max_time_width.min(t));
        let s = rng.random_range(0..=t - w);
        mask_time(&mut x, s, w);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ones(t: usize, f: usize) -> Tensor {
        Tensor::filled(&[t, f], 1.0)
    }

    #[test]
    fn zero_masks_are_identity() {
        let x = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(spec_mask(&x, &MaskPolicy::default(), &mut rng).unwrap(), x);
    }

    #[test]
    fn full_width_time_mask_zeroes_everything() {
        let mut x = ones(7, 4);
        mask_time(&mut x, 0, 7);
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_fraction_matches_expectation() {
        // One time mask, width uniform on 0..=W: expected fraction W / (2T).
        let (t, f, w) = (20, 3, 8);
        let policy = MaskPolicy {
            time_masks: 1,
            max_time_width: w,
            ..MaskPolicy::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = ones(t, f);
        let draws = 10_000;
        let mut zeros = 0usize;
        for _ in 0..draws {
            let y = spec_mask(&x, &policy, &mut rng).unwrap();
            zeros += y.data().iter().filter(|&&v| v == 0.0).count();
        }
        let observed = zeros as f64 / (draws * t * f) as f64;
        let expected = w as f64 / (2.0 * t as f64);
        assert!((observed - expected).abs() / expected < 0.05, "{observed} vs {expected}");
    }

    #[test]
    fn oversized_frequency_band_is_rejected() {
        let policy = MaskPolicy {
            freq_masks: 1,
            max_freq_width: 5,
            ..MaskPolicy::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(spec_mask(&ones(3, 4), &policy, &mut rng).is_err());
    }
}
