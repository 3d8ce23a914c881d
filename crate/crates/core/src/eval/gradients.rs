use rand::{Rng as _, SeedableRng};

use crate::blocks::{AttentionBlock, AttnMask};
use crate::error::Result;
use crate::model::{ArModel, LasoModel, LossScope, ModelConfig, Seq2Seq};
use crate::numeric::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::{ParamId, ParamSet};
use crate::numeric::tensor::Tensor;
use crate::Rng;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("matching length")
}

/// Keeps ReLU kinks out of probe range.
fn off_zero(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    random(shape, rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Random linear functional of `x`, so every entry reaches the loss.
fn project(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> Result<Var> {
    let mut rng = Rng::seed_from_u64(seed);
    let w = g.constant(random(g.shape(x), &mut rng));
    let y = g.mul(x, w)?;
    g.sum(y)
}

/// Gradient check of every differentiable op, one attention block in
/// self- and cross-attention form, and the full training losses of both
/// tiny models, all in double precision. `opts.per_tensor` only limits the
/// whole-model checks.
pub fn gradient_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheckReport>> {
    let mut reports = Vec::new();
    let op_opts = GradCheckOptions {
        per_tensor: None,
        ..*opts
    };
    let mut rng = Rng::seed_from_u64(opts.seed);
    let mut p = ParamSet::new();
    let names = [
        ("a", random(&[3, 4], &mut rng)),
        ("b", random(&[4, 5], &mut rng)),
        ("c", random(&[5, 4], &mut rng)),
        ("d", off_zero(&[3, 4], &mut rng)),
        ("r", random(&[4], &mut rng)),
        ("bb", random(&[2, 4, 5], &mut rng)),
        ("x", random(&[3, 6], &mut rng)),
        ("gamma", random(&[6], &mut rng)),
        ("beta", random(&[6], &mut rng)),
        ("img", random(&[2, 7, 6], &mut rng)),
        ("kern", random(&[3, 2, 3, 3], &mut rng)),
        ("bias", random(&[3], &mut rng)),
        ("logits", random(&[4, 7], &mut rng)),
    ];
    for (n, t) in names {
        p.add(n, t)?;
    }
    let id = |n: &str| -> ParamId { p.id(n).expect("registered above") };
    let mut run = |name: &str, f: &dyn for<'g> Fn(&mut Graph<'g, f64>) -> Result<Var>| -> Result<()> {
        reports.push(grad_check(name, &p, f, &op_opts)?);
        Ok(())
    };
    run("matmul", &|g| {
        let (a, b) = (g.param(id("a")), g.param(id("b")));
        let y = g.matmul(a, b)?;
        project(g, y, 10)
    })?;
    run("matmul_nt", &|g| {
        let (a, c) = (g.param(id("a")), g.param(id("c")));
        let y = g.matmul_nt(a, c)?;
        project(g, y, 11)
    })?;
    run("batched matmul", &|g| {
        let (a, b) = (g.param(id("a")), g.param(id("bb")));
        let y = g.matmul(a, b)?;
        project(g, y, 12)
    })?;
    run("add mul scale", &|g| {
        let (a, d) = (g.param(id("a")), g.param(id("d")));
        let s = g.add(a, d)?;
        let m = g.mul(s, d)?;
        let y = g.scale(m, 0.7)?;
        project(g, y, 13)
    })?;
    run("relu add_row", &|g| {
        let (d, r) = (g.param(id("d")), g.param(id("r")));
        let y = g.relu(d)?;
        let z = g.add_row(y, r)?;
        project(g, z, 14)
    })?;
    run("softmax", &|g| {
        let x = g.param(id("x"));
        let y = g.softmax(x, None)?;
        project(g, y, 20)
    })?;
    let mask = AttnMask::key_padding(3, 6, 4);
    run("masked softmax", &|g| {
        let x = g.param(id("x"));
        let y = g.softmax(x, Some(&mask.allow))?;
        project(g, y, 21)
    })?;
    run("layer_norm", &|g| {
        let (x, gm, bt) = (g.param(id("x")), g.param(id("gamma")), g.param(id("beta")));
        let y = g.layer_norm(x, gm, bt, 1e-5)?;
        project(g, y, 22)
    })?;
    run("glu", &|g| {
        let x = g.param(id("x"));
        let y = g.glu(x)?;
        project(g, y, 23)
    })?;
    for stride in [(1, 1), (2, 2), (2, 1)] {
        run(&format!("conv2d {stride:?}"), &|g| {
            let (x, w, b) = (g.param(id("img")), g.param(id("kern")), g.param(id("bias")));
            let y = g.conv2d(x, w, Some(b), stride)?;
            let y = g.channels_to_frames(y)?;
            project(g, y, 30)
        })?;
    }
    run("reshape slice concat", &|g| {
        let a = g.param(id("a"));
        let r = g.reshape(a, &[6, 2])?;
        let a = g.slice_cols(r, 1, 1)?;
        let b = g.slice_cols(r, 0, 2)?;
        let y = g.concat_cols(&[b, a, b])?;
        project(g, y, 31)
    })?;
    run("gather_rows", &|g| {
        let t = g.param(id("logits"));
        let y = g.gather_rows(t, &[3, 0, 3, 2])?;
        project(g, y, 32)
    })?;
    for smoothing in [0.0, 0.1] {
        run(&format!("smoothed ce {smoothing}"), &|g| {
            let l = g.param(id("logits"));
            g.smoothed_cross_entropy(l, &[1, 0, 6, 1], smoothing)
        })?;
    }

    let mut bp = ParamSet::new();
    let block = AttentionBlock::new(&mut bp, "blk", 8, 2, 12, 0.1, 1e-5, &mut rng)?;
    let xq = bp.add("xq", random(&[3, 8], &mut rng))?;
    let xkv = bp.add("xkv", random(&[5, 8], &mut rng))?;
    let causal = AttnMask::causal(3);
    reports.push(grad_check(
        "attention block (self)",
        &bp,
        |g| {
            let q = g.param(xq);
            let (y, _) = block.forward(g, q, None, Some(&causal))?;
            project(g, y, 50)
        },
        &op_opts,
    )?);
    reports.push(grad_check(
        "attention block (cross)",
        &bp,
        |g| {
            let (q, kv) = (g.param(xq), g.param(xkv));
            let (y, _) = block.forward(g, q, Some(kv), None)?;
            project(g, y, 51)
        },
        &op_opts,
    )?);

    let laso = LasoModel::<f64>::new(ModelConfig::tiny(), opts.seed.wrapping_add(7))?;
    let feats = random(&[17, laso.config().n_mels], &mut rng);
    reports.push(grad_check(
        "LASO-tiny loss",
        laso.params(),
        |g| {
            Ok(laso
                .utterance_loss(g, &feats, &[3, 5, 2, 9, 4], LossScope::Full)?
                .loss)
        },
        opts,
    )?);
    let ar = ArModel::<f64>::new(ModelConfig::tiny(), opts.seed.wrapping_add(10))?;
    let feats = random(&[13, ar.config().n_mels], &mut rng);
    reports.push(grad_check(
        "AR-tiny loss",
        ar.params(),
        |g| Ok(ar.utterance_loss(g, &feats, &[6, 2, 7], LossScope::Full)?.loss),
        opts,
    )?);
    Ok(reports)
}
