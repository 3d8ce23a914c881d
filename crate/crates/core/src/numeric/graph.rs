//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass.
//! Parameters are borrowed from a [`ParamSet`] rather than copied, so a
//! frozen model can be shared by many concurrent graphs.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numeric::kernels::{self, sigmoid, MASK_LOGIT};
use crate::numeric::param::{Gradients, ParamId, ParamSet};
use crate::numeric::scalar::{gemm, Scalar};
use crate::numeric::tensor::Tensor;
use crate::Rng;

/// Node handle inside a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param,
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    AddRow {
        x: Var,
        bias: Var,
    },
    Mul(Var, Var),
    Scale {
        x: Var,
        factor: T,
    },
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Glu(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        cols: Vec<T>,
    },
    ChannelsToFrames(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    SmoothedCe {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        smoothing: T,
    },
    Sum(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul(..) => "mul",
            Op::Scale { .. } => "scale",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Glu(_) => "glu",
            Op::Conv2d { .. } => "conv2d",
            Op::ChannelsToFrames(_) => "channels_to_frames",
            Op::Reshape(_) => "reshape",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(_) => "concat_cols",
            Op::GatherRows { .. } => "gather_rows",
            Op::Dropout { .. } => "dropout",
            Op::SmoothedCe { .. } => "smoothed_cross_entropy",
            Op::Sum(_) => "sum",
        }
    }
}

struct Node<T> {
    /// `None` for parameters, whose value lives in the borrowed set.
    value: Option<Tensor<T>>,
    param: Option<ParamId>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamSet<T>>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    rng: Option<Rng>,
    grad_enabled: bool,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Backward<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Backward<T> {
    pub fn grad(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// Evaluation-mode graph over `params` (dropout disabled).
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            rng: None,
            grad_enabled: true,
        }
    }

    /// Graph without a parameter set, for differentiating plain inputs.
    pub fn detached() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            rng: None,
            grad_enabled: true,
        }
    }

    /// Switches to training mode; dropout draws from `rng`.
    pub fn training(mut self, rng: Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    /// Disables gradient bookkeeping for pure inference.
    pub fn no_grad(mut self) -> Self {
        self.grad_enabled = false;
        self
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// Gives back the dropout generator so callers can continue its stream.
    pub fn into_rng(self) -> Option<Rng> {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        let node = &self.nodes[var.0];
        match (&node.value, node.param) {
            (Some(v), _) => v,
            (None, Some(id)) => self.params.expect("param node implies set").value(id),
            (None, None) => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.value(var).shape()
    }

    fn requires(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Result<Var> {
        if cfg!(debug_assertions) && !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|&p| self.requires(p));
        self.nodes.push(Node {
            value: Some(value),
            param: None,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A value that is not differentiated.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            param: None,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            param: None,
            op: Op::Leaf,
            requires_grad: self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// The leaf for parameter `id`; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            param: Some(id),
            op: Op::Param,
            requires_grad: self.grad_enabled,
        });
        let var = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(var);
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul_forward(self.value(a), self.value(b), false)?;
        self.push(out, Op::MatMul { a, b, trans_b: false }, &[a, b])
    }

    /// `a · bᵀ` over the last two axes.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul_forward(self.value(a), self.value(b), true)?;
        self.push(out, Op::MatMul { a, b, trans_b: true }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds `bias` (shape `[n]`) to every row of `x` (last extent `n`).
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vb.rank() != 1 || vb.numel() != vx.last_dim() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let mut out = vx.clone();
        for row in out.data_mut().chunks_exact_mut(vb.numel()) {
            for (o, &b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow { x, bias }, &[x, bias])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x, factor }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Softmax over the last axis. `allow`, when given, has one flag per
    /// element; `false` entries receive a large negative logit.
    pub fn softmax(&mut self, x: Var, allow: Option<&[bool]>) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if let Some(mask) = allow {
            if mask.len() != vx.numel() {
                return Err(Error::InvalidArgument(format!(
                    "mask of {} flags for {:?}",
                    mask.len(),
                    vx.shape()
                )));
            }
        }
        let mut out = vx.clone();
        let penalty = T::of(MASK_LOGIT);
        for (r, row) in out.data_mut().chunks_exact_mut(d).enumerate() {
            if let Some(mask) = allow {
                let flags = &mask[r * d..(r + 1) * d];
                if !flags.iter().any(|&f| f) {
                    return Err(Error::FullyMasked { row: r });
                }
                for (v, &ok) in row.iter_mut().zip(flags) {
                    if !ok {
                        *v += penalty;
                    }
                }
            }
            kernels::softmax_in_place(row);
        }
        self.push(out, Op::Softmax(x), &[x])
    }

    /// Normalizes the last axis to zero mean and unit (population) variance,
    /// then applies `gamma` and `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let d = vx.last_dim();
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            });
        }
        let eps = T::of(eps);
        let inv_d = T::one() / T::of(d as f64);
        let rows = vx.numel() / d;
        let mut xhat = Vec::with_capacity(vx.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(vx.numel());
        for row in vx.rows() {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * is;
                xhat.push(h);
                out.push(h * vg.data()[j] + vb.data()[j]);
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Gated linear unit: first half of the last axis gated by the sigmoid of
    /// the second half.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let d2 = vx.last_dim();
        if !d2.is_multiple_of(2) {
            return Err(Error::InvalidShape {
                op: "glu",
                shape: vx.shape().to_vec(),
                reason: "last extent must be even".into(),
            });
        }
        let d = d2 / 2;
        let mut out = Vec::with_capacity(vx.numel() / 2);
        for row in vx.rows() {
            let (a, b) = row.split_at(d);
            out.extend(a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)));
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = d;
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::Glu(x), &[x])
    }

    /// 3x3 convolution with padding 1 over `[c_in, h, w]` input and
    /// `[c_out, c_in, 3, 3]` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize)) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        let &[c_in, h, wd] = vx.shape() else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: vx.shape().to_vec(),
                reason: "expected [channels, height, width]".into(),
            });
        };
        let &[c_out, kc, kh, kw] = vw.shape() else {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: vw.shape().to_vec(),
                reason: "expected [c_out, c_in, 3, 3]".into(),
            });
        };
        if kc != c_in || kh != 3 || kw != 3 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: vx.shape().to_vec(),
                rhs: vw.shape().to_vec(),
            });
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [c_out] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![c_out],
                    rhs: self.value(b).shape().to_vec(),
                });
            }
        }
        let (cols, ho, wo) = kernels::im2col(vx.data(), (c_in, h, wd), stride);
        let plane = ho * wo;
        let mut out = vec![T::zero(); c_out * plane];
        gemm(
            c_out,
            c_in * 9,
            plane,
            vw.data(),
            false,
            &cols,
            false,
            T::zero(),
            &mut out,
        );
        if let Some(b) = b {
            let vb = self.value(b);
            for (co, chunk) in out.chunks_exact_mut(plane).enumerate() {
                let bias = vb.data()[co];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        let out = Tensor::new(vec![c_out, ho, wo], out)?;
        let needs_cols = self.grad_enabled && self.requires(w);
        let op = Op::Conv2d {
            x,
            w,
            b,
            stride,
            cols: if needs_cols { cols } else { Vec::new() },
        };
        let parents: Vec<Var> = [x, w].into_iter().chain(b).collect();
        self.push(out, op, &parents)
    }

    /// `[c, t, f]` → `[t, c * f]`: one row per time step.
    pub fn channels_to_frames(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let &[c, t, f] = vx.shape() else {
            return Err(Error::InvalidShape {
                op: "channels_to_frames",
                shape: vx.shape().to_vec(),
                reason: "expected rank 3".into(),
            });
        };
        let mut out = vec![T::zero(); c * t * f];
        for ci in 0..c {
            for ti in 0..t {
                let src = &vx.data()[(ci * t + ti) * f..(ci * t + ti + 1) * f];
                out[ti * c * f + ci * f..ti * c * f + (ci + 1) * f].copy_from_slice(src);
            }
        }
        let out = Tensor::new(vec![t, c * f], out)?;
        self.push(out, Op::ChannelsToFrames(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        self.push(out, Op::Reshape(x), &[x])
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        let d = vx.last_dim();
        if len == 0 || start + len > d {
            return Err(Error::InvalidShape {
                op: "slice_cols",
                shape: vx.shape().to_vec(),
                reason: format!("columns {start}..{}", start + len),
            });
        }
        let mut out = Vec::with_capacity(vx.numel() / d * len);
        for row in vx.rows() {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = vx.shape().to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::SliceCols { x, start }, &[x])
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let lead = self.value(first).shape()[..self.value(first).rank() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(shape, out)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Rows of `table` selected by `ids` (an embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        let (n, d) = vt.dims2()?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty id list".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(Error::InvalidArgument(format!("row {id} of {n}")));
            }
            out.extend_from_slice(vt.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], out)?;
        self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Inverted dropout. Outside training mode, or at rate 0, returns `x`
    /// itself.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("dropout rate {rate}")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        if self.rng.is_none() {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let n = match &self.nodes[x.0].value {
            Some(v) => v.numel(),
            None => self
                .params
                .expect("param node")
                .value(self.nodes[x.0].param.expect("param"))
                .numel(),
        };
        let rng = self.rng.as_mut().expect("training mode");
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let vx = self.value(x);
        let data = vx.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(vx.shape().to_vec(), data)?;
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Label-smoothed cross entropy of row-wise logits against `targets`,
    /// averaged over rows. Target mass is `(1 - s)` on the label plus `s / V`
    /// on every class.
    pub fn smoothed_cross_entropy(&mut self, logits: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let vl = self.value(logits);
        let (rows, v) = vl.dims2()?;
        if targets.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "smoothed_cross_entropy",
                lhs: vl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::InvalidArgument(format!(
                "target id {bad} outside vocabulary of {v}"
            )));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::InvalidArgument(format!("label smoothing {smoothing}")));
        }
        let s = T::of(smoothing);
        let off = s / T::of(v as f64);
        let mut probs = vl.data().to_vec();
        let mut total = T::zero();
        for (row, &t) in probs.chunks_exact_mut(v).zip(targets) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            let mut acc = T::zero();
            for (k, z) in row.iter_mut().enumerate() {
                let logp = *z - lse;
                let q = if k == t { T::one() - s + off } else { off };
                acc += q * logp;
                *z = logp.exp();
            }
            total -= acc;
        }
        let loss = Tensor::scalar(total / T::of(rows as f64));
        self.push(
            loss,
            Op::SmoothedCe {
                logits,
                probs,
                targets: targets.to_vec(),
                smoothing: s,
            },
            &[logits],
        )
    }

    /// Sum of every element, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// Reverse sweep from `root`, seeded with ones.
    pub fn backward(&self, root: Var) -> Result<Backward<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Backward { grads })
    }

    /// Collects parameter gradients (zeros for parameters not reached).
    pub fn param_gradients(&self, backward: &Backward<T>) -> Gradients<T> {
        let params = self.params.expect("graph has no parameter set");
        let grads = params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                self.param_vars[i]
                    .and_then(|v| backward.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect();
        Gradients::from_vec(grads)
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = node.value.as_ref();
        match &node.op {
            Op::Leaf | Op::Param => {}
            &Op::MatMul { a, b, trans_b } => {
                let (va, vb) = (self.value(a), self.value(b));
                let plan = kernels::matmul_plan(va.shape(), vb.shape(), trans_b)?;
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let (sa, sb, sc) = (m * k, k * n, m * n);
                if self.requires(a) {
                    let mut ga = vec![T::zero(); va.numel()];
                    for bi in 0..plan.batch {
                        let ao = if plan.a_batched { bi * sa } else { 0 };
                        let bo = if plan.b_batched { bi * sb } else { 0 };
                        gemm(
                            m,
                            n,
                            k,
                            &g.data()[bi * sc..(bi + 1) * sc],
                            false,
                            &vb.data()[bo..bo + sb],
                            !trans_b,
                            T::one(),
                            &mut ga[ao..ao + sa],
                        );
                    }
                    accumulate(grads, a, Tensor::new(va.shape().to_vec(), ga)?);
                }
                if self.requires(b) {
                    let mut gb = vec![T::zero(); vb.numel()];
                    for bi in 0..plan.batch {
                        let ao = if plan.a_batched { bi * sa } else { 0 };
                        let bo = if plan.b_batched { bi * sb } else { 0 };
                        let gs = &g.data()[bi * sc..(bi + 1) * sc];
                        let as_ = &va.data()[ao..ao + sa];
                        if trans_b {
                            gemm(n, m, k, gs, true, as_, false, T::one(), &mut gb[bo..bo + sb]);
                        } else {
                            gemm(k, m, n, as_, true, gs, false, T::one(), &mut gb[bo..bo + sb]);
                        }
                    }
                    accumulate(grads, b, Tensor::new(vb.shape().to_vec(), gb)?);
                }
            }
            &Op::Add(a, b) => {
                if self.requires(a) {
                    accumulate(grads, a, g.clone());
                }
                if self.requires(b) {
                    accumulate(grads, b, g.clone());
                }
            }
            &Op::AddRow { x, bias } => {
                if self.requires(x) {
                    accumulate(grads, x, g.clone());
                }
                if self.requires(bias) {
                    let d = g.last_dim();
                    let mut gb = vec![T::zero(); d];
                    for row in g.rows() {
                        for (s, &v) in gb.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    accumulate(grads, bias, Tensor::new(vec![d], gb)?);
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.requires(a) {
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, a, Tensor::new(g.shape().to_vec(), d)?);
                }
                if self.requires(b) {
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    accumulate(grads, b, Tensor::new(g.shape().to_vec(), d)?);
                }
            }
            &Op::Scale { x, factor } => {
                accumulate(grads, x, g.map(|v| v * factor));
            }
            &Op::Relu(x) => {
                let vx = self.value(x);
                let d = g
                    .data()
                    .iter()
                    .zip(vx.data())
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                accumulate(grads, x, Tensor::new(g.shape().to_vec(), d)?);
            }
            &Op::Softmax(x) => {
                let y = out.expect("softmax output");
                let d = y.last_dim();
                let mut gx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.rows().zip(g.data().chunks_exact(d)) {
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                accumulate(grads, x, Tensor::new(y.shape().to_vec(), gx)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let vg = self.value(gamma);
                let d = vg.numel();
                if self.requires(x) {
                    let inv_d = T::one() / T::of(d as f64);
                    let mut gx = Vec::with_capacity(g.numel());
                    for ((gr, hr), &is) in g.rows().zip(xhat.chunks_exact(d)).zip(inv_std) {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let gh = gr[j] * vg.data()[j];
                            s1 += gh;
                            s2 += gh * hr[j];
                        }
                        for j in 0..d {
                            let gh = gr[j] * vg.data()[j];
                            gx.push(is * (gh - (s1 + hr[j] * s2) * inv_d));
                        }
                    }
                    accumulate(grads, x, Tensor::new(g.shape().to_vec(), gx)?);
                }
                if self.requires(gamma) {
                    let mut gg = vec![T::zero(); d];
                    for (gr, hr) in g.rows().zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                    accumulate(grads, gamma, Tensor::new(vec![d], gg)?);
                }
                if self.requires(beta) {
                    let mut gb = vec![T::zero(); d];
                    for gr in g.rows() {
                        for j in 0..d {
                            gb[j] += gr[j];
                        }
                    }
                    accumulate(grads, beta, Tensor::new(vec![d], gb)?);
                }
            }
            &Op::Glu(x) => {
                let vx = self.value(x);
                let d = g.last_dim();
                let mut gx = Vec::with_capacity(vx.numel());
                for (xr, gr) in vx.rows().zip(g.data().chunks_exact(d)) {
                    let (a, b) = xr.split_at(d);
                    gx.extend(b.iter().zip(gr).map(|(&bv, &gv)| gv * sigmoid(bv)));
                    gx.extend(a.iter().zip(b).zip(gr).map(|((&av, &bv), &gv)| {
                        let s = sigmoid(bv);
                        gv * av * s * (T::one() - s)
                    }));
                }
                accumulate(grads, x, Tensor::new(vx.shape().to_vec(), gx)?);
            }
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                cols,
            } => {
                let (x, w) = (*x, *w);
                let (vx, vw) = (self.value(x), self.value(w));
                let (c_in, h, wd) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                let c_out = vw.shape()[0];
                let plane = g.numel() / c_out;
                if self.requires(w) {
                    let mut gw = vec![T::zero(); vw.numel()];
                    gemm(
                        c_out,
                        plane,
                        c_in * 9,
                        g.data(),
                        false,
                        cols,
                        true,
                        T::zero(),
                        &mut gw,
                    );
                    accumulate(grads, w, Tensor::new(vw.shape().to_vec(), gw)?);
                }
                if self.requires(x) {
                    let mut gcols = vec![T::zero(); c_in * 9 * plane];
                    gemm(
                        c_in * 9,
                        c_out,
                        plane,
                        vw.data(),
                        true,
                        g.data(),
                        false,
                        T::zero(),
                        &mut gcols,
                    );
                    let gx = kernels::col2im(&gcols, (c_in, h, wd), *stride);
                    accumulate(grads, x, Tensor::new(vx.shape().to_vec(), gx)?);
                }
                if let Some(b) = *b {
                    if self.requires(b) {
                        let gb = g
                            .data()
                            .chunks_exact(plane)
                            .map(|c| c.iter().copied().sum())
                            .collect();
                        accumulate(grads, b, Tensor::new(vec![c_out], gb)?);
                    }
                }
            }
            &Op::ChannelsToFrames(x) => {
                let vx = self.value(x);
                let (c, t, f) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
                let mut gx = vec![T::zero(); vx.numel()];
                for ci in 0..c {
                    for ti in 0..t {
                        gx[(ci * t + ti) * f..(ci * t + ti + 1) * f]
                            .copy_from_slice(&g.data()[ti * c * f + ci * f..ti * c * f + (ci + 1) * f]);
                    }
                }
                accumulate(grads, x, Tensor::new(vx.shape().to_vec(), gx)?);
            }
            &Op::Reshape(x) => {
                let shape = self.value(x).shape().to_vec();
                accumulate(grads, x, g.clone().reshape(&shape)?);
            }
            &Op::SliceCols { x, start } => {
                let vx = self.value(x);
                let (d, len) = (vx.last_dim(), g.last_dim());
                let mut gx = vec![T::zero(); vx.numel()];
                for (dst, src) in gx.chunks_exact_mut(d).zip(g.rows()) {
                    dst[start..start + len].copy_from_slice(src);
                }
                accumulate(grads, x, Tensor::new(vx.shape().to_vec(), gx)?);
            }
            Op::ConcatCols(parts) => {
                let total = g.last_dim();
                let rows = g.numel() / total;
                let mut offset = 0;
                for &p in parts {
                    let vp = self.value(p);
                    let w = vp.last_dim();
                    if self.requires(p) {
                        let mut gp = Vec::with_capacity(vp.numel());
                        for r in 0..rows {
                            gp.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(grads, p, Tensor::new(vp.shape().to_vec(), gp)?);
                    }
                    offset += w;
                }
            }
            Op::GatherRows { table, ids } => {
                let vt = self.value(*table);
                let d = vt.last_dim();
                let mut gt = vec![T::zero(); vt.numel()];
                for (&id, gr) in ids.iter().zip(g.rows()) {
                    for (s, &v) in gt[id * d..(id + 1) * d].iter_mut().zip(gr) {
                        *s += v;
                    }
                }
                accumulate(grads, *table, Tensor::new(vt.shape().to_vec(), gt)?);
            }
            Op::Dropout { x, mask } => {
                let d = g.data().iter().zip(mask).map(|(&a, &m)| a * m).collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::SmoothedCe {
                logits,
                probs,
                targets,
                smoothing,
            } => {
                let vl = self.value(*logits);
                let (rows, v) = vl.dims2()?;
                let seed = g.data()[0] / T::of(rows as f64);
                let off = *smoothing / T::of(v as f64);
                let mut gl = probs.clone();
                for (row, &t) in gl.chunks_exact_mut(v).zip(targets) {
                    for (k, p) in row.iter_mut().enumerate() {
                        let q = if k == t { T::one() - *smoothing + off } else { off };
                        *p = (*p - q) * seed;
                    }
                }
                accumulate(grads, *logits, Tensor::new(vl.shape().to_vec(), gl)?);
            }
            &Op::Sum(x) => {
                let seed = g.data()[0];
                accumulate(grads, x, Tensor::full(self.value(x).shape(), seed));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], var: Var, g: Tensor<T>) {
    match &mut grads[var.0] {
        Some(existing) => {
            for (a, &b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
