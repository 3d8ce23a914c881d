use rand_distr::{Distribution, Uniform};

use crate::error::Result;
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::{ParamId, ParamSet};
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;
use crate::Rng;

/// Tensor with entries drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
///
/// Draws happen in `f64` so that one seed gives the same model in every
/// precision.
pub fn init_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("extent matches")
}

/// Affine map `x W + b` with `W` stored as `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let w = params.add(format!("{name}.w"), init_uniform(&[d_in, d_out], d_in, rng))?;
        let b = if bias {
            Some(params.add(format!("{name}.b"), Tensor::zeros(&[d_out])))
        } else {
            None
        }
        .transpose()?;
        Ok(Linear { w, b })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, d: usize, eps: f64) -> Result<Self> {
        Ok(LayerNorm {
            gamma: params.add(format!("{name}.gamma"), Tensor::full(&[d], T::one()))?,
            beta: params.add(format!("{name}.beta"), Tensor::zeros(&[d]))?,
            eps,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta, self.eps)
    }
}
