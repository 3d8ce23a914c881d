//! Forward kernels shared by [`Tensor`] and the autodiff graph.

use crate::error::{Error, Result};
use crate::numeric::scalar::{gemm, Scalar};
use crate::numeric::tensor::Tensor;

/// Additive logit applied to forbidden attention positions.
pub const MASK_LOGIT: f64 = -1e9;

/// Batch layout of a matmul: `(batch, m, k, n, a_batched, b_batched)`.
pub(crate) struct MatmulPlan {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
    pub out_shape: Vec<usize>,
}

pub(crate) fn matmul_plan(a: &[usize], b: &[usize], trans_b: bool) -> Result<MatmulPlan> {
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    if a.len() < 2 || b.len() < 2 {
        return Err(mismatch());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (bk, n) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if k != bk {
        return Err(mismatch());
    }
    let a_lead = &a[..a.len() - 2];
    let b_lead = &b[..b.len() - 2];
    let (lead, a_batched, b_batched) = match (a_lead.is_empty(), b_lead.is_empty()) {
        (_, true) => (a_lead, false, false),
        (true, false) => (b_lead, false, true),
        (false, false) if a_lead == b_lead => (a_lead, true, true),
        _ => return Err(mismatch()),
    };
    let batch: usize = lead.iter().product();
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    // A plain rhs lets every leading axis of the lhs fold into its rows.
    if !b_batched {
        return Ok(MatmulPlan {
            batch: 1,
            m: m * batch.max(1),
            k,
            n,
            a_batched: false,
            b_batched: false,
            out_shape,
        });
    }
    Ok(MatmulPlan {
        batch,
        m,
        k,
        n,
        a_batched,
        b_batched,
        out_shape,
    })
}

pub(crate) fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let plan = matmul_plan(a.shape(), b.shape(), trans_b)?;
    let mut out = vec![T::zero(); plan.out_shape.iter().product()];
    let (sa, sb, sc) = (plan.m * plan.k, plan.k * plan.n, plan.m * plan.n);
    for bi in 0..plan.batch {
        let ao = if plan.a_batched { bi * sa } else { 0 };
        let bo = if plan.b_batched { bi * sb } else { 0 };
        gemm(
            plan.m,
            plan.k,
            plan.n,
            &a.data()[ao..ao + sa],
            false,
            &b.data()[bo..bo + sb],
            trans_b,
            T::zero(),
            &mut out[bi * sc..(bi + 1) * sc],
        );
    }
    Tensor::new(plan.out_shape, out)
}

pub(crate) fn softmax_in_place<T: Scalar>(lane: &mut [T]) {
    let max = lane.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in lane.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = T::one() / total;
    for v in lane.iter_mut() {
        *v *= inv;
    }
}

/// Spatial output extent of a 3x3 convolution with padding 1.
pub fn conv_out_len(n: usize, stride: usize) -> usize {
    debug_assert!(n >= 1 && stride >= 1);
    (n - 1) / stride + 1
}

/// Unfolds `[c, h, w]` into `[c * 9, ho * wo]` patches for a padded 3x3 kernel.
pub(crate) fn im2col<T: Scalar>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (sh, sw): (usize, usize),
) -> (Vec<T>, usize, usize) {
    let ho = conv_out_len(h, sh);
    let wo = conv_out_len(w, sw);
    let plane = ho * wo;
    let mut cols = vec![T::zero(); c * 9 * plane];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * plane;
                for oy in 0..ho {
                    let iy = (oy * sh + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * sw + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
pub(crate) fn col2im<T: Scalar>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (sh, sw): (usize, usize),
) -> Vec<T> {
    let ho = conv_out_len(h, sh);
    let wo = conv_out_len(w, sw);
    let plane = ho * wo;
    let mut x = vec![T::zero(); c * h * w];
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * plane;
                for oy in 0..ho {
                    let iy = (oy * sh + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * sw + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            x[base + ix as usize] += cols[row + oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
