use crate::error::{Error, Result};
use crate::numeric::param::{Gradients, ParamSet};
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;

/// Moment estimates and step counter of the Adam optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments with β1 = 0.9, β2 = 0.98, ε = 1e-9.
    pub fn new(params: &ParamSet<T>) -> Self {
        Self::with_hyper(params, 0.9, 0.98, 1e-9)
    }

    pub fn with_hyper(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update of every parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!("learning rate {lr}")));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads.iter()).zip(&state.m) {
        if p.value.shape() != g.shape() || p.value.shape() != m.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.value.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    let one = T::one();
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let pd = p.value.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (one - b1) * gi;
            vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::param::ParamId;

    fn one_param(values: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("w", Tensor::from_f64(&[values.len()], values).unwrap())
            .unwrap();
        p
    }

    fn grads(values: &[f64]) -> Gradients<f64> {
        Gradients::from_vec(vec![Tensor::from_f64(&[values.len()], values).unwrap()])
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = one_param(&[1.0, 1.0, 1.0]);
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &grads(&[3.0, -0.5, 1e-3]), &mut s, 0.01).unwrap();
        for (&after, sign) in p.value(ParamId(0)).data().iter().zip([1.0, -1.0, 1.0]) {
            assert!((after - (1.0 - 0.01 * sign)).abs() < 1e-6, "{after}");
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = one_param(&[0.25, -2.0]);
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &grads(&[0.0, 0.0]), &mut s, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let (lr, g0, x0) = (1e-3, 0.7, 0.3);
        let (b1, b2, eps) = (0.9f64, 0.98f64, 1e-9);
        let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1) * g0;
            v = b2 * v + (1.0 - b2) * g0 * g0;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        let mut p = one_param(&[x0]);
        let mut s = AdamState::new(&p);
        for _ in 0..2 {
            adam_step(&mut p, &grads(&[g0]), &mut s, lr).unwrap();
        }
        assert!((p.value(ParamId(0)).data()[0] - x).abs() < 1e-12);
    }

    #[test]
    fn rejects_misaligned_gradients() {
        let mut p = one_param(&[1.0]);
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &grads(&[1.0, 2.0]), &mut s, 0.1).is_err());
        assert!(adam_step(&mut p, &grads(&[1.0]), &mut s, 0.0).is_err());
    }
}
