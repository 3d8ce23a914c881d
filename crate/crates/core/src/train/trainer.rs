use std::time::Instant;

use rand::{Rng as _, SeedableRng};

use crate::data::{make_batches, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{LossScope, Seq2Seq};
use crate::numeric::graph::Graph;
use crate::numeric::optim::{adam_step, AdamState};
use crate::numeric::param::Gradients;
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;
use crate::train::augment::spec_augment;
use crate::train::checkpoint::{average_checkpoints, Checkpoint};
use crate::train::config::TrainConfig;
use crate::train::schedule::warmup_lr;
use crate::Rng;

/// Features and unpadded token ids of one training utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub id: String,
    pub features: Tensor<T>,
    pub tokens: Vec<usize>,
}

impl<T: Scalar> Example<T> {
    pub fn from_utterance(utt: &Utterance, vocab: &Vocabulary) -> Self {
        Example {
            id: utt.id.clone(),
            features: utt.features.cast(),
            tokens: vocab.encode(&utt.transcript),
        }
    }

    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Mean utterance loss.
    pub loss: f64,
    /// Position-wise token accuracy.
    pub accuracy: f64,
    pub utterances: usize,
    pub grad_norm: f64,
}

impl std::fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step={} epoch={} lr={:.6e} loss={:.6} acc={:.4} utts={} grad_norm={:.4e}",
            self.step, self.epoch, self.lr, self.loss, self.accuracy, self.utterances, self.grad_norm
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

/// Adam with warm-up, gradient accumulation and SpecAugment over any
/// [`Seq2Seq`] model.
pub struct Trainer<T: Scalar, M> {
    model: M,
    config: TrainConfig,
    optim: AdamState<T>,
    step: u64,
    epoch: usize,
}

impl<T: Scalar, M: Seq2Seq<T>> Trainer<T, M> {
    pub fn new(model: M, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optim = AdamState::new(model.params());
        Ok(Trainer {
            model,
            config,
            optim,
            step: 0,
            epoch: 0,
        })
    }

    /// Continues from `ckpt`: parameters, optimizer moments, step and
    /// epoch counters.
    pub fn resume(mut model: M, config: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != model.kind() || &ckpt.config != model.config() {
            return Err(Error::InvalidArgument(
                "checkpoint does not match the model configuration".into(),
            ));
        }
        ckpt.restore_params(model.params_mut())?;
        let mut trainer = Self::new(model, config)?;
        if let Some(state) = ckpt.restore_optimizer(trainer.model.params())? {
            trainer.optim = state;
        }
        trainer.step = ckpt.step;
        trainer.epoch = ckpt.epoch;
        Ok(trainer)
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn into_model(self) -> M {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn optimizer(&self) -> &AdamState<T> {
        &self.optim
    }

    /// True once `max_steps` optimizer steps have been taken.
    pub fn finished(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.step >= m as u64)
    }

    /// Learning rate applied at optimizer step `step` (1-based).
    pub fn lr(&self, step: u64) -> f64 {
        self.config.lr_factor
            * warmup_lr(
                step as usize,
                self.config.warmup_steps,
                self.model.config().d_model,
            )
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.model, self.step, self.epoch, Some(&self.optim))
    }

    /// Mean gradient over every utterance of `micro_batches`, then one Adam
    /// update. Summing per-utterance gradients before the single division
    /// makes the update independent of how utterances are split.
    pub fn step_on(&mut self, micro_batches: &[Vec<&Example<T>>], rng: &mut Rng) -> Result<StepMetrics> {
        let mut grads = Gradients::zeros_like(self.model.params());
        let (mut loss_sum, mut correct, mut total, mut count) = (0.0, 0, 0, 0usize);
        let next = self.step + 1;
        let scope = if next <= self.config.filler_warmup_steps as u64 {
            LossScope::Transcript
        } else {
            LossScope::Full
        };
        for ex in micro_batches.iter().flatten() {
            let features = if self.config.spec_augment.enabled {
                spec_augment(&ex.features, &self.config.spec_augment, rng)
            } else {
                ex.features.clone()
            };
            let mut g = Graph::new(self.model.params()).training(Rng::seed_from_u64(rng.random()));
            let term = self.model.utterance_loss(&mut g, &features, &ex.tokens, scope)?;
            let loss = g.value(term.loss).data()[0].to_f64_lossy();
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: next,
                    detail: format!("loss {loss} on utterance {}", ex.id),
                });
            }
            let back = g.backward(term.loss)?;
            grads.add_assign(&g.param_gradients(&back))?;
            loss_sum += loss;
            correct += term.correct;
            total += term.total;
            count += 1;
        }
        if count == 0 {
            return Err(Error::InvalidArgument("optimizer step over no utterances".into()));
        }
        grads.scale(T::of(1.0 / count as f64));
        let grad_norm = grads.norm();
        if !grads.all_finite() {
            return Err(Error::Diverged {
                step: next,
                detail: format!("non-finite gradient (mean loss {})", loss_sum / count as f64),
            });
        }
        let lr = self.lr(next);
        adam_step(self.model.params_mut(), &grads, &mut self.optim, lr)?;
        self.step = next;
        Ok(StepMetrics {
            step: next,
            epoch: self.epoch + 1,
            lr,
            loss: loss_sum / count as f64,
            accuracy: correct as f64 / total.max(1) as f64,
            utterances: count,
            grad_norm,
        })
    }

    /// One pass over `data` in budgeted, length-bucketed batches, `accum`
    /// batches per optimizer step. Batch order, augmentation and dropout
    /// derive from `(seed, epoch)`, so an epoch replays exactly after a
    /// resume. Stops early when `max_steps` is reached.
    pub fn train_epoch(
        &mut self,
        data: &[Example<T>],
        mut on_step: impl FnMut(&StepMetrics),
    ) -> Result<EpochMetrics> {
        let start = Instant::now();
        let mut rng = Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64);
        let frames: Vec<usize> = data.iter().map(Example::frames).collect();
        let batches = make_batches(&frames, self.config.frame_budget, rng.random())?;
        let (mut steps, mut loss, mut correct_weighted, mut utts) = (0, 0.0, 0.0, 0);
        for group in batches.chunks(self.config.accum) {
            if self.finished() {
                break;
            }
            let micro: Vec<Vec<&Example<T>>> = group
                .iter()
                .map(|b| b.iter().map(|&i| &data[i]).collect())
                .collect();
            let m = self.step_on(&micro, &mut rng)?;
            on_step(&m);
            steps += 1;
            loss += m.loss * m.utterances as f64;
            correct_weighted += m.accuracy * m.utterances as f64;
            utts += m.utterances;
        }
        self.epoch += 1;
        let n = utts.max(1) as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            steps,
            loss: loss / n,
            accuracy: correct_weighted / n,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Trains the remaining epochs up to `epochs`, handing every epoch
    /// checkpoint to `on_epoch`, and returns the average of the last
    /// `average_last` of them (fewer if fewer epochs ran here).
    pub fn fit(
        &mut self,
        data: &[Example<T>],
        mut on_step: impl FnMut(&StepMetrics),
        mut on_epoch: impl FnMut(&EpochMetrics, &Checkpoint) -> Result<()>,
    ) -> Result<Checkpoint> {
        let keep = self.config.average_last;
        let mut recent: Vec<Checkpoint> = Vec::with_capacity(keep);
        while self.epoch < self.config.epochs && !self.finished() {
            let metrics = self.train_epoch(data, &mut on_step)?;
            let ckpt = self.checkpoint();
            on_epoch(&metrics, &ckpt)?;
            if recent.len() == keep {
                recent.remove(0);
            }
            recent.push(ckpt);
        }
        if recent.is_empty() {
            recent.push(self.checkpoint());
        }
        average_checkpoints(&recent)
    }
}
