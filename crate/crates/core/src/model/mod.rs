//! The non-autoregressive model, the autoregressive baseline, and search.

pub mod ar;
pub mod beam;
pub mod config;
pub mod laso;

use crate::data::Cmvn;
use crate::error::Result;
use crate::numeric::graph::{Graph, Var};
use crate::numeric::param::ParamSet;
use crate::numeric::scalar::Scalar;
use crate::numeric::tensor::Tensor;

pub use ar::{ArModel, ArScorer};
pub use beam::{beam_search, greedy_search, BeamConfig, BeamHypothesis, BeamResult, StepScorer};
pub use config::{ModelConfig, ModelKind};
pub use laso::{LasoModel, LasoPass};

/// Per-utterance training objective.
pub struct LossTerm {
    /// Scalar loss averaged over output positions.
    pub loss: Var,
    /// Positions whose argmax equals the target.
    pub correct: usize,
    pub total: usize,
}

/// Output positions covered by the non-autoregressive loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossScope {
    /// All `L` slots, the `<eos>` filler tail included.
    #[default]
    Full,
    /// The transcript and its first `<eos>`; later filler slots are ignored.
    Transcript,
}

/// What the trainer needs from a model.
pub trait Seq2Seq<T: Scalar> {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn cmvn(&self) -> Option<&Cmvn>;

    /// Builds the loss of one utterance with transcript `tokens` (no
    /// padding or end symbol) into `g`. Models without a filler tail treat
    /// both scopes alike.
    fn utterance_loss(
        &self,
        g: &mut Graph<'_, T>,
        features: &Tensor<T>,
        tokens: &[usize],
        scope: LossScope,
    ) -> Result<LossTerm>;
}
