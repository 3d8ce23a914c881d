//! Model shapes, checkpoints, and reproducibility of training.

mod common;

use std::path::Path;

use common::{random, small_corpus, tiny};
use laso::eval::{greedy_decode, DecodeOptions};
use laso::model::{LossScope, Seq2Seq};
use laso::train::{Example, Trainer};
use laso::{ArModel, Checkpoint, Graph, LasoModel, TrainConfig, EOS};

fn examples(num_utts: usize, seed: u64) -> (laso::data::SynthCorpus, Vec<Example<f32>>) {
    let corpus = small_corpus(num_utts, 6, seed);
    let data = corpus
        .utterances
        .iter()
        .map(|u| Example::from_utterance(u, &corpus.vocab))
        .collect();
    (corpus, data)
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        warmup_steps: 20,
        frame_budget: 120,
        average_last: 2,
        ..TrainConfig::default()
    }
}

fn same_params(a: &LasoModel<f32>, b: &LasoModel<f32>) -> f64 {
    a.params()
        .iter()
        .zip(b.params().iter())
        .map(|(x, y)| x.value.max_abs_diff(&y.value).unwrap())
        .fold(0.0, f64::max)
}

#[test]
fn summarizer_yields_one_row_per_slot_at_every_duration() {
    let model = LasoModel::<f32>::new(tiny(9, 7), 0).unwrap();
    for (frames, reduced) in [(4, 1), (100, 25), (800, 200)] {
        let blocks = model
            .pds_attention(&random(&[frames, 80], frames as u64))
            .unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].len(), 4);
        for head in &blocks[0] {
            assert_eq!(head.shape(), &[7, reduced]);
            for row in head.rows() {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
        assert_eq!(model.forward(&random(&[frames, 80], 1)).unwrap().shape(), &[7, 9]);
    }
}

#[test]
fn batched_forward_matches_single_utterances() {
    let model = LasoModel::<f32>::new(tiny(9, 7), 2).unwrap();
    let (a, b) = (random::<f32>(&[30, 80], 3), random::<f32>(&[17, 80], 4));
    let mut padded = a.data().to_vec();
    padded.extend_from_slice(b.data());
    padded.extend(std::iter::repeat_n(9.0, 13 * 80));
    let batch = laso::Tensor::new(vec![2, 30, 80], padded).unwrap();
    let out = model.forward_batch(&batch, &[30, 17]).unwrap();
    let per = 7 * 9;
    assert_eq!(&out.data()[..per], model.forward(&a).unwrap().data());
    assert_eq!(&out.data()[per..], model.forward(&b).unwrap().data());
}

#[test]
fn transcript_scope_covers_the_transcript_and_one_end_symbol() {
    let model = LasoModel::<f32>::new(tiny(9, 7), 0).unwrap();
    let features = random::<f32>(&[40, 80], 5);
    let tokens = [2, 5, 3];
    for (scope, rows) in [(LossScope::Full, 7), (LossScope::Transcript, 4)] {
        let mut g = Graph::new(model.params()).no_grad();
        let term = model.utterance_loss(&mut g, &features, &tokens, scope).unwrap();
        assert_eq!(term.total, rows);
    }
    let ar = ArModel::<f32>::new(tiny(9, 7), 0).unwrap();
    for scope in [LossScope::Full, LossScope::Transcript] {
        let mut g = Graph::new(ar.params()).no_grad();
        assert_eq!(
            ar.utterance_loss(&mut g, &features, &tokens, scope)
                .unwrap()
                .total,
            4
        );
    }
}

#[test]
fn greedy_decoding_is_pure() {
    let (corpus, _) = examples(3, 1);
    let model = LasoModel::<f32>::new(tiny(corpus.vocab.len(), 8), 3).unwrap();
    for u in &corpus.utterances {
        let a = greedy_decode(
            &model,
            &u.id,
            &u.features,
            &corpus.vocab,
            DecodeOptions::default(),
        )
        .unwrap();
        let b = greedy_decode(
            &model,
            &u.id,
            &u.features,
            &corpus.vocab,
            DecodeOptions::default(),
        )
        .unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert_eq!(a.position_probs, b.position_probs);
        assert!(!a.tokens.contains(&EOS));
    }
}

#[test]
fn checkpoints_round_trip_bit_for_bit() {
    let (corpus, data) = examples(12, 2);
    let model = LasoModel::<f32>::new(tiny(corpus.vocab.len(), 8), 0).unwrap();
    let mut trainer = Trainer::new(model, config(1)).unwrap();
    trainer.train_epoch(&data, |_| {}).unwrap();
    let ckpt = trainer.checkpoint();
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes, Path::new("memory")).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let mut fresh = LasoModel::<f32>::new(tiny(corpus.vocab.len(), 8), 9).unwrap();
    back.restore_params(fresh.params_mut()).unwrap();
    assert_eq!(fresh.params(), trainer.model().params());
    let moments = back.restore_optimizer(fresh.params()).unwrap().unwrap();
    assert_eq!(&moments, trainer.optimizer());
}

#[test]
fn training_is_reproducible() {
    let (corpus, data) = examples(16, 4);
    let run = || {
        let model = LasoModel::<f32>::new(tiny(corpus.vocab.len(), 8), 0).unwrap();
        let mut trainer = Trainer::new(model, config(2)).unwrap();
        let mut losses = Vec::new();
        trainer
            .fit(&data, |m| losses.push(m.loss), |_, _| Ok(()))
            .unwrap();
        (trainer.into_model(), losses)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la, lb);
    assert_eq!(same_params(&a, &b), 0.0);
}

#[test]
fn resumed_training_continues_the_same_trajectory() {
    let (corpus, data) = examples(16, 5);
    let model = LasoModel::<f32>::new(tiny(corpus.vocab.len(), 8), 0).unwrap();

    let mut straight = Trainer::new(model.clone(), config(2)).unwrap();
    straight.fit(&data, |_| {}, |_, _| Ok(())).unwrap();

    let mut first = Trainer::new(model.clone(), config(1)).unwrap();
    first.fit(&data, |_| {}, |_, _| Ok(())).unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    let ckpt = Checkpoint::from_bytes(&bytes, Path::new("memory")).unwrap();
    let mut resumed = Trainer::resume(model, config(2), &ckpt).unwrap();
    assert_eq!(resumed.epoch(), 1);
    resumed.fit(&data, |_| {}, |_, _| Ok(())).unwrap();

    assert_eq!(resumed.step(), straight.step());
    let diff = same_params(resumed.model(), straight.model());
    assert!(diff <= 1e-6, "resumed parameters differ by {diff}");
}

#[test]
fn averaged_checkpoint_is_the_mean_of_the_last_epochs() {
    let (corpus, data) = examples(12, 6);
    let model = LasoModel::<f32>::new(tiny(corpus.vocab.len(), 8), 0).unwrap();
    let mut trainer = Trainer::new(model, config(3)).unwrap();
    let mut epochs = Vec::new();
    let averaged = trainer
        .fit(
            &data,
            |_| {},
            |_, c| {
                epochs.push(c.clone());
                Ok(())
            },
        )
        .unwrap();
    assert_eq!(epochs.len(), 3);
    for (name, avg) in averaged.parameters() {
        let pick = |c: &Checkpoint| c.parameters().find(|(n, _)| *n == name).unwrap().1.clone();
        let (a, b) = (pick(&epochs[1]), pick(&epochs[2]));
        for ((&m, &x), &y) in avg.data().iter().zip(a.data()).zip(b.data()) {
            assert!((m - (x + y) / 2.0).abs() <= 1e-6);
        }
    }
}
