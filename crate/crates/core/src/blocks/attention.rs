use crate::blocks::linear::init_uniform;
use crate::error::{Error, Result};
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::{ParamId, ParamSet};
use crate::numeric::scalar::Scalar;
use crate::Rng;

/// Boolean attendability matrix: `allow[q * keys + k]` is `true` when query
/// `q` may attend key `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    pub queries: usize,
    pub keys: usize,
    pub allow: Vec<bool>,
}

impl AttnMask {
    /// Query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let allow = (0..n).flat_map(|q| (0..n).map(move |k| k <= q)).collect();
        AttnMask {
            queries: n,
            keys: n,
            allow,
        }
    }

    /// Every query sees the first `valid` keys only.
    pub fn key_padding(queries: usize, keys: usize, valid: usize) -> Self {
        let allow = (0..queries)
            .flat_map(|_| (0..keys).map(move |k| k < valid))
            .collect();
        AttnMask { queries, keys, allow }
    }
}

/// `softmax(q kᵀ / sqrt(d_k)) v`. Returns the attended values and the
/// `[T_q, T_k]` score matrix.
pub fn scaled_dot_attention<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<&AttnMask>,
) -> Result<(Var, Var)> {
    let (tq, dk) = g.value(q).dims2()?;
    let (tk, dk2) = g.value(k).dims2()?;
    let (tv, _) = g.value(v).dims2()?;
    if dk != dk2 || tk != tv {
        return Err(Error::ShapeMismatch {
            op: "scaled_dot_attention",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        });
    }
    if let Some(m) = mask {
        if m.queries != tq || m.keys != tk {
            return Err(Error::ShapeMismatch {
                op: "attention mask",
                lhs: vec![tq, tk],
                rhs: vec![m.queries, m.keys],
            });
        }
    }
    let logits = g.matmul_nt(q, k)?;
    let logits = g.scale(logits, T::of(1.0 / (dk as f64).sqrt()))?;
    let scores = g.softmax(logits, mask.map(|m| m.allow.as_slice()))?;
    let out = g.matmul(scores, v)?;
    Ok((out, scores))
}

/// Multi-head attention. The per-head projections `W_i^q, W_i^k, W_i^v`
/// (each `d_model x d_model/heads`) are stored side by side as single
/// `d_model x d_model` matrices; head `i` owns column block `i`.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::config(
                "heads",
                format!("model width {d_model} is not divisible by {heads} heads"),
            ));
        }
        let mut proj = |suffix: &str| {
            params.add(
                format!("{name}.{suffix}"),
                init_uniform(&[d_model, d_model], d_model, rng),
            )
        };
        Ok(MultiHeadAttention {
            wq: proj("wq")?,
            wk: proj("wk")?,
            wv: proj("wv")?,
            wo: proj("wo")?,
            heads,
            d_model,
        })
    }

    /// Attends `queries` over `keys`/`values`; returns the output and the
    /// per-head score matrices.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        queries: Var,
        keys: Var,
        values: Var,
        mask: Option<&AttnMask>,
    ) -> Result<(Var, Vec<Var>)> {
        let (wq, wk, wv, wo) = (
            g.param(self.wq),
            g.param(self.wk),
            g.param(self.wv),
            g.param(self.wo),
        );
        let q = g.matmul(queries, wq)?;
        let k = g.matmul(keys, wk)?;
        let v = g.matmul(values, wv)?;
        let dh = self.d_model / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        let mut scores = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let (o, s) = scaled_dot_attention(g, qh, kh, vh, mask)?;
            outs.push(o);
            scores.push(s);
        }
        let cat = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)?
        };
        Ok((g.matmul(cat, wo)?, scores))
    }
}
