use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;
use crate::Rng;

/// Frequency and time masking. Mask widths are uniform on `[0, max]`; the
/// time width cap is `min(max_time_width, time_ratio * T)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentConfig {
    pub enabled: bool,
    pub freq_masks: usize,
    pub max_freq_width: usize,
    pub time_masks: usize,
    pub max_time_width: usize,
    pub time_ratio: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            enabled: true,
            freq_masks: 2,
            max_freq_width: 10,
            time_masks: 2,
            max_time_width: 40,
            time_ratio: 0.2,
        }
    }
}

impl SpecAugmentConfig {
    pub fn disabled() -> Self {
        SpecAugmentConfig {
            enabled: false,
            ..Self::default()
        }
    }

    /// Largest time-mask width for an utterance of `frames` frames.
    pub fn time_width(&self, frames: usize) -> usize {
        self.max_time_width
            .min((self.time_ratio * frames as f64) as usize)
    }
}

/// Zeroes random frequency bands and time spans of `[T, F]` features.
/// Masks that would overrun an edge are clipped.
pub fn spec_augment<T: Scalar>(features: &Tensor<T>, config: &SpecAugmentConfig, rng: &mut Rng) -> Tensor<T> {
    let mut out = features.clone();
    if !config.enabled {
        return out;
    }
    let (frames, bins) = features.dims2().expect("features are [T, F]");
    for _ in 0..config.freq_masks {
        let width = rng.random_range(0..=config.max_freq_width.min(bins));
        let start = rng.random_range(0..=bins - width);
        for row in out.data_mut().chunks_exact_mut(bins) {
            row[start..start + width].fill(T::zero());
        }
    }
    let cap = config.time_width(frames);
    for _ in 0..config.time_masks {
        let width = rng.random_range(0..=cap);
        let start = rng.random_range(0..=frames - width);
        out.data_mut()[start * bins..(start + width) * bins].fill(T::zero());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ones(t: usize, f: usize) -> Tensor<f64> {
        Tensor::full(&[t, f], 1.0)
    }

    #[test]
    fn zero_widths_are_identity() {
        let cfg = SpecAugmentConfig {
            max_freq_width: 0,
            max_time_width: 0,
            ..SpecAugmentConfig::default()
        };
        let x = ones(30, 8);
        assert_eq!(spec_augment(&x, &cfg, &mut Rng::seed_from_u64(0)), x);
    }

    #[test]
    fn time_masks_cover_every_bin() {
        let cfg = SpecAugmentConfig {
            freq_masks: 0,
            ..SpecAugmentConfig::default()
        };
        let mut rng = Rng::seed_from_u64(1);
        for _ in 0..50 {
            let y = spec_augment(&ones(50, 6), &cfg, &mut rng);
            for row in y.rows() {
                assert!(row.iter().all(|&v| v == 0.0) || row.iter().all(|&v| v == 1.0));
            }
        }
    }

    #[test]
    fn masked_fraction_matches_closed_form() {
        // One mask of width w ~ U{0..W} over an axis of length n covers w/n
        // on average: E = W / (2n).
        let (t, f) = (100, 80);
        let freq = SpecAugmentConfig {
            freq_masks: 1,
            time_masks: 0,
            ..SpecAugmentConfig::default()
        };
        let time = SpecAugmentConfig {
            freq_masks: 0,
            time_masks: 1,
            ..SpecAugmentConfig::default()
        };
        let mut rng = Rng::seed_from_u64(2);
        let x = ones(t, f);
        for (cfg, expected) in [(freq, 10.0 / (2.0 * 80.0)), (time, 20.0 / (2.0 * 100.0))] {
            let draws = 10_000;
            let masked: f64 = (0..draws)
                .map(|_| {
                    let y = spec_augment(&x, &cfg, &mut rng);
                    y.data().iter().filter(|&&v| v == 0.0).count() as f64 / (t * f) as f64
                })
                .sum::<f64>()
                / draws as f64;
            assert!((masked - expected).abs() < 0.01, "{masked} vs {expected}");
        }
    }
}
