use crate::blocks::linear::Linear;
use crate::error::Result;
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::ParamSet;
use crate::numeric::scalar::Scalar;
use crate::Rng;

/// Position-wise `W2 · GLU(W1 x + b1) + b2`, where `W1` widens to
/// `2 * d_ff` so the gated output is `d_ff` wide.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub w1: Linear,
    pub w2: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        d_model: usize,
        d_ff: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(FeedForward {
            w1: Linear::new(params, &format!("{name}.w1"), d_model, 2 * d_ff, true, rng)?,
            w2: Linear::new(params, &format!("{name}.w2"), d_ff, d_model, true, rng)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let h = self.w1.forward(g, x)?;
        let h = g.glu(h)?;
        self.w2.forward(g, h)
    }
}
