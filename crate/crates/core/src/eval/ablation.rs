use crate::data::{Cmvn, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::eval::cer::ErrorCounts;
use crate::eval::decode::{greedy_decode, DecodeOptions};
use crate::model::{LasoModel, ModelConfig};
use crate::train::{EpochMetrics, Example, TrainConfig, Trainer};

/// Test result of one summarizer depth.
#[derive(Clone, Debug)]
pub struct AblationEntry {
    pub pds_blocks: usize,
    pub params: usize,
    pub cer: f64,
    pub train_accuracy: f64,
    /// The averaged model that was scored.
    pub model: LasoModel<f32>,
}

/// Greedy corpus CER of `model` on `utts`.
pub fn evaluate_cer(model: &LasoModel<f32>, utts: &[Utterance], vocab: &Vocabulary) -> Result<f64> {
    let mut counts = ErrorCounts::default();
    for u in utts {
        let r = greedy_decode(model, &u.id, &u.features, vocab, DecodeOptions::default())?;
        counts.add(&u.transcript, &r.text);
    }
    Ok(counts.rate())
}

/// Trains one model per summarizer depth in `depths` from the same seed
/// and recipe, averaging the trailing epoch checkpoints, and scores each
/// on `test`. Normalization statistics come from `train`.
#[allow(clippy::too_many_arguments)]
pub fn pds_ablation(
    base: &ModelConfig,
    recipe: &TrainConfig,
    train: &[Utterance],
    test: &[Utterance],
    vocab: &Vocabulary,
    depths: &[usize],
    seed: u64,
    mut on_epoch: impl FnMut(usize, &EpochMetrics),
) -> Result<Vec<AblationEntry>> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument(
            "ablation needs train and test utterances".into(),
        ));
    }
    let cmvn = Cmvn::fit(train.iter().map(|u| &u.features))?;
    let data: Vec<Example<f32>> = train.iter().map(|u| Example::from_utterance(u, vocab)).collect();
    depths
        .iter()
        .map(|&depth| {
            let config = ModelConfig {
                pds_blocks: depth,
                ..base.clone()
            };
            let mut model = LasoModel::<f32>::new(config, seed)?;
            model.set_cmvn(Some(cmvn.clone()))?;
            let params = model.num_params();
            let mut trainer = Trainer::new(model, recipe.clone())?;
            let mut accuracy = 0.0;
            let averaged = trainer.fit(
                &data,
                |_| {},
                |m, _| {
                    accuracy = m.accuracy;
                    on_epoch(depth, m);
                    Ok(())
                },
            )?;
            let model = LasoModel::<f32>::from_checkpoint(&averaged)?;
            Ok(AblationEntry {
                pds_blocks: depth,
                params,
                cer: evaluate_cer(&model, test, vocab)?,
                train_accuracy: accuracy,
                model,
            })
        })
        .collect()
}

/// Markdown table with one column per depth.
pub fn ablation_table(label: &str, entries: &[AblationEntry]) -> String {
    let row = |head: &str, cells: Vec<String>| format!("| {head} | {} |\n", cells.join(" | "));
    let mut out = row(
        "#block of PDS",
        entries.iter().map(|e| e.pds_blocks.to_string()).collect(),
    );
    out += &row("---", entries.iter().map(|_| "---".to_string()).collect());
    out += &row(
        &format!("{label} CER (%)"),
        entries.iter().map(|e| format!("{:.2}", 100.0 * e.cer)).collect(),
    );
    out += &row(
        "parameters",
        entries.iter().map(|e| e.params.to_string()).collect(),
    );
    out
}

/// Largest CER difference between any two depths.
pub fn cer_spread(entries: &[AblationEntry]) -> f64 {
    let (lo, hi) = entries
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.cer), hi.max(e.cer))
        });
    if entries.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(pds_blocks: usize, cer: f64) -> AblationEntry {
        AblationEntry {
            pds_blocks,
            params: 1000 * pds_blocks,
            cer,
            train_accuracy: 1.0,
            model: LasoModel::new(ModelConfig::tiny(), 0).unwrap(),
        }
    }

    #[test]
    fn table_has_a_column_per_depth() {
        let e: Vec<_> = (1..=4).map(|d| entry(d, 0.01 * d as f64)).collect();
        let t = ablation_table("tiny", &e);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "| #block of PDS | 1 | 2 | 3 | 4 |");
        assert_eq!(lines[2], "| tiny CER (%) | 1.00 | 2.00 | 3.00 | 4.00 |");
        assert!((cer_spread(&e) - 0.03).abs() < 1e-12);
        assert_eq!(cer_spread(&[]), 0.0);
    }
}
