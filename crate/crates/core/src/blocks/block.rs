use crate::blocks::attention::{AttnMask, MultiHeadAttention};
use crate::blocks::feed_forward::FeedForward;
use crate::blocks::linear::LayerNorm;
use crate::error::Result;
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::ParamSet;
use crate::numeric::scalar::Scalar;
use crate::Rng;

/// Pre-norm attention block:
///
/// ```text
/// u = x_q + Dropout(MHA(LN(x_q), LN(x_kv), LN(x_kv)))
/// y = u + Dropout(FFN(LN(u)))
/// ```
///
/// With no `x_kv` it is a self-attention block.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub attn_norm: LayerNorm,
    pub attn: MultiHeadAttention,
    pub ffn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub dropout: f64,
}

impl AttentionBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        d_model: usize,
        heads: usize,
        d_ff: usize,
        dropout: f64,
        ln_eps: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(AttentionBlock {
            attn_norm: LayerNorm::new(params, &format!("{name}.attn_norm"), d_model, ln_eps)?,
            attn: MultiHeadAttention::new(params, &format!("{name}.attn"), d_model, heads, rng)?,
            ffn_norm: LayerNorm::new(params, &format!("{name}.ffn_norm"), d_model, ln_eps)?,
            ffn: FeedForward::new(params, &format!("{name}.ffn"), d_model, d_ff, rng)?,
            dropout,
        })
    }

    /// Returns the block output and the per-head attention scores.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x_q: Var,
        x_kv: Option<Var>,
        mask: Option<&AttnMask>,
    ) -> Result<(Var, Vec<Var>)> {
        let q = self.attn_norm.forward(g, x_q)?;
        let kv = match x_kv {
            Some(x) => self.attn_norm.forward(g, x)?,
            None => q,
        };
        let (a, scores) = self.attn.forward(g, q, kv, kv, mask)?;
        let a = g.dropout(a, self.dropout)?;
        let u = g.add(x_q, a)?;
        let h = self.ffn_norm.forward(g, u)?;
        let h = self.ffn.forward(g, h)?;
        let h = g.dropout(h, self.dropout)?;
        Ok((g.add(u, h)?, scores))
    }
}
