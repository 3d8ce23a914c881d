use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::augment::SpecAugmentConfig;

/// Optimization settings. The defaults are sized for desk-scale synthetic
/// runs; [`TrainConfig::paper`] gives the full-corpus recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub warmup_steps: usize,
    /// Micro-batches accumulated per optimizer step.
    pub accum: usize,
    /// Upper bound on the summed frame count of one micro-batch.
    pub frame_budget: usize,
    /// Multiplier on the warm-up schedule.
    pub lr_factor: f64,
    /// Optimizer steps at the start of training whose loss skips the
    /// `<eos>` filler slots after the first one. 0 trains every slot from
    /// the first step.
    pub filler_warmup_steps: usize,
    /// Number of trailing epoch checkpoints averaged into the final model.
    pub average_last: usize,
    pub spec_augment: SpecAugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            max_steps: None,
            warmup_steps: 1000,
            accum: 1,
            frame_budget: 2000,
            lr_factor: 1.0,
            filler_warmup_steps: 0,
            average_last: 10,
            spec_augment: SpecAugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// 130 epochs, 12000 warm-up steps, 12-way accumulation of batches of
    /// about 100 seconds (10 ms frames).
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 130,
            warmup_steps: 12000,
            accum: 12,
            frame_budget: 10_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("warmup_steps", self.warmup_steps),
            ("accum", self.accum),
            ("frame_budget", self.frame_budget),
            ("average_last", self.average_last),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("max_steps", "must be at least 1"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor.is_finite()) {
            return Err(Error::config("lr_factor", "must be positive and finite"));
        }
        let sa = &self.spec_augment;
        if !(0.0..=1.0).contains(&sa.time_ratio) {
            return Err(Error::config("spec_augment.time_ratio", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_counts_are_rejected_by_field() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig::paper().validate().is_ok());
        let bad = TrainConfig {
            accum: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("accum"));
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let ok: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(ok.epochs, 3);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }
}
