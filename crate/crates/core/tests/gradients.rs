//! Reverse-mode gradients against central differences, op by op and for
//! whole models.

use laso::blocks::{AttentionBlock, AttnMask};
use laso::model::{LossScope, Seq2Seq};
use laso::{
    grad_check, ArModel, GradCheckOptions, Graph, LasoModel, ModelConfig, ParamSet, Result, Tensor, Var,
};
use rand::{Rng as _, SeedableRng};

fn random(shape: &[usize], rng: &mut laso::Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of probe range.
fn off_zero(shape: &[usize], rng: &mut laso::Rng) -> Tensor<f64> {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Projects a node onto a fixed random direction so every output entry
/// contributes to the loss.
fn project(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = laso::Rng::seed_from_u64(seed);
    let w = g.constant(random(g.shape(x), &mut rng));
    let y = g.mul(x, w)?;
    g.sum(y)
}

fn check<F>(name: &str, params: &ParamSet<f64>, opts: &GradCheckOptions, loss: F)
where
    F: for<'g> Fn(&mut Graph<'g, f64>) -> Result<Var>,
{
    let report = grad_check(name, params, loss, opts).unwrap();
    println!("{report}");
    assert!(report.passed(), "{report:?}");
}

fn set(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.add(n, t).unwrap();
    }
    p
}

fn id(p: &ParamSet<f64>, name: &str) -> laso::ParamId {
    p.id(name).unwrap()
}

#[test]
fn elementwise_and_matrix_ops() {
    let mut rng = laso::Rng::seed_from_u64(1);
    let opts = GradCheckOptions::default();
    let p = set(vec![
        ("a", random(&[3, 4], &mut rng)),
        ("b", random(&[4, 5], &mut rng)),
        ("c", random(&[5, 4], &mut rng)),
        ("d", off_zero(&[3, 4], &mut rng)),
        ("r", random(&[4], &mut rng)),
        ("bb", random(&[2, 4, 5], &mut rng)),
    ]);
    check("matmul", &p, &opts, |g| {
        let (a, b) = (g.param(id(&p, "a")), g.param(id(&p, "b")));
        let y = g.matmul(a, b)?;
        project(g, y, 10)
    });
    check("matmul_nt", &p, &opts, |g| {
        let (a, c) = (g.param(id(&p, "a")), g.param(id(&p, "c")));
        let y = g.matmul_nt(a, c)?;
        project(g, y, 11)
    });
    check("batched matmul", &p, &opts, |g| {
        let (a, b) = (g.param(id(&p, "a")), g.param(id(&p, "bb")));
        let y = g.matmul(a, b)?;
        project(g, y, 12)
    });
    check("add mul scale", &p, &opts, |g| {
        let (a, d) = (g.param(id(&p, "a")), g.param(id(&p, "d")));
        let s = g.add(a, d)?;
        let m = g.mul(s, d)?;
        let y = g.scale(m, 0.7)?;
        project(g, y, 13)
    });
    check("add_row relu", &p, &opts, |g| {
        let (d, r) = (g.param(id(&p, "d")), g.param(id(&p, "r")));
        let y = g.relu(d)?;
        let z = g.add_row(y, r)?;
        project(g, z, 14)
    });
}

#[test]
fn softmax_layer_norm_glu() {
    let mut rng = laso::Rng::seed_from_u64(2);
    let opts = GradCheckOptions::default();
    let p = set(vec![
        ("x", random(&[3, 6], &mut rng)),
        ("gamma", random(&[6], &mut rng)),
        ("beta", random(&[6], &mut rng)),
    ]);
    check("softmax", &p, &opts, |g| {
        let x = g.param(id(&p, "x"));
        let y = g.softmax(x, None)?;
        project(g, y, 20)
    });
    let mask = AttnMask::key_padding(3, 6, 4);
    check("masked softmax", &p, &opts, |g| {
        let x = g.param(id(&p, "x"));
        let y = g.softmax(x, Some(&mask.allow))?;
        project(g, y, 21)
    });
    check("layer_norm", &p, &opts, |g| {
        let (x, gm, bt) = (
            g.param(id(&p, "x")),
            g.param(id(&p, "gamma")),
            g.param(id(&p, "beta")),
        );
        let y = g.layer_norm(x, gm, bt, 1e-5)?;
        project(g, y, 22)
    });
    check("glu", &p, &opts, |g| {
        let x = g.param(id(&p, "x"));
        let y = g.glu(x)?;
        project(g, y, 23)
    });
}

#[test]
fn convolution_and_layout_ops() {
    let mut rng = laso::Rng::seed_from_u64(3);
    let opts = GradCheckOptions::default();
    let p = set(vec![
        ("x", random(&[2, 7, 6], &mut rng)),
        ("w", random(&[3, 2, 3, 3], &mut rng)),
        ("b", random(&[3], &mut rng)),
        ("m", random(&[4, 6], &mut rng)),
        ("table", random(&[5, 3], &mut rng)),
    ]);
    for stride in [(1, 1), (2, 2), (2, 1)] {
        check(&format!("conv2d {stride:?}"), &p, &opts, |g| {
            let (x, w, b) = (g.param(id(&p, "x")), g.param(id(&p, "w")), g.param(id(&p, "b")));
            let y = g.conv2d(x, w, Some(b), stride)?;
            let y = g.channels_to_frames(y)?;
            project(g, y, 30)
        });
    }
    check("reshape slice concat", &p, &opts, |g| {
        let m = g.param(id(&p, "m"));
        let r = g.reshape(m, &[6, 4])?;
        let a = g.slice_cols(r, 1, 2)?;
        let b = g.slice_cols(r, 0, 3)?;
        let y = g.concat_cols(&[b, a, b])?;
        project(g, y, 31)
    });
    check("gather_rows", &p, &opts, |g| {
        let t = g.param(id(&p, "table"));
        let y = g.gather_rows(t, &[4, 0, 4, 2])?;
        project(g, y, 32)
    });
}

#[test]
fn smoothed_cross_entropy() {
    let mut rng = laso::Rng::seed_from_u64(4);
    let p = set(vec![("logits", random(&[4, 7], &mut rng))]);
    for smoothing in [0.0, 0.1, 0.5] {
        check(
            &format!("smoothed ce {smoothing}"),
            &p,
            &GradCheckOptions::default(),
            |g| {
                let l = g.param(id(&p, "logits"));
                g.smoothed_cross_entropy(l, &[1, 0, 6, 1], smoothing)
            },
        );
    }
}

#[test]
fn attention_block_self_and_cross() {
    let mut rng = laso::Rng::seed_from_u64(5);
    let mut p = ParamSet::new();
    let block = AttentionBlock::new(&mut p, "blk", 8, 2, 12, 0.1, 1e-5, &mut rng).unwrap();
    p.add("xq", random(&[3, 8], &mut rng)).unwrap();
    p.add("xkv", random(&[5, 8], &mut rng)).unwrap();
    let opts = GradCheckOptions::default();
    check("attention block (self)", &p, &opts, |g| {
        let xq = g.param(id(&p, "xq"));
        let (y, _) = block.forward(g, xq, None, Some(&AttnMask::causal(3)))?;
        project(g, y, 50)
    });
    check("attention block (cross)", &p, &opts, |g| {
        let (xq, xkv) = (g.param(id(&p, "xq")), g.param(id(&p, "xkv")));
        let (y, _) = block.forward(g, xq, Some(xkv), None)?;
        project(g, y, 51)
    });
}

#[test]
fn random_width_32_four_head_block() {
    let mut rng = laso::Rng::seed_from_u64(6);
    let mut p = ParamSet::new();
    let block = AttentionBlock::new(&mut p, "blk", 32, 4, 64, 0.0, 1e-5, &mut rng).unwrap();
    p.add("x", random(&[6, 32], &mut rng)).unwrap();
    let opts = GradCheckOptions {
        per_tensor: Some(40),
        ..GradCheckOptions::default()
    };
    check("block D=32 H=4", &p, &opts, |g| {
        let x = g.param(id(&p, "x"));
        let (y, _) = block.forward(g, x, None, None)?;
        assert!(g.value(y).all_finite());
        project(g, y, 60)
    });
}

fn tiny_features(frames: usize, mels: usize, seed: u64) -> Tensor<f64> {
    random(&[frames, mels], &mut laso::Rng::seed_from_u64(seed))
}

#[test]
fn full_laso_tiny_loss() {
    let model = LasoModel::<f64>::new(ModelConfig::tiny(), 7).unwrap();
    let feats = tiny_features(17, model.config().n_mels, 8);
    let tokens = [3, 5, 2, 9, 4];
    let opts = GradCheckOptions {
        per_tensor: Some(4),
        seed: 9,
        ..GradCheckOptions::default()
    };
    check("LASO-tiny loss", model.params(), &opts, |g| {
        Ok(model.utterance_loss(g, &feats, &tokens, LossScope::Full)?.loss)
    });
}

#[test]
fn full_ar_tiny_loss() {
    let model = ArModel::<f64>::new(ModelConfig::tiny(), 10).unwrap();
    let feats = tiny_features(13, model.config().n_mels, 11);
    let tokens = [6, 2, 7];
    let opts = GradCheckOptions {
        per_tensor: Some(4),
        seed: 12,
        ..GradCheckOptions::default()
    };
    check("AR-tiny loss", model.params(), &opts, |g| {
        Ok(model.utterance_loss(g, &feats, &tokens, LossScope::Full)?.loss)
    });
}
