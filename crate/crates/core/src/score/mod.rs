//! Score fields `s(x, t) ≈ ∇_x log p_t(x)` under the `σ(t) = t` kernel
//! `p_t = p_0 * N(0, t² I)`.

mod empirical;
mod guided;
mod mixture;
mod mlp;
mod perturbed;

use std::sync::Arc;

use crate::error::{Error, Result};

pub use empirical::EmpiricalDataset;
pub use guided::{guided_score, GuidedScore};
pub use mixture::GaussianMixture;
pub use mlp::{train_mlp_score, MlpScoreNet, TrainOutcome, TrainingConfig, TrainingSample};
pub use perturbed::{perturbed_score, PerturbationMode, PerturbationSpec, PerturbedScore};

/// The one abstraction every sampler consumes.
///
/// Implementations must be deterministic in `(x, t)` and return finite
/// values for finite `x` and `t > 0`.
pub trait ScoreField: Send + Sync {
    fn dim(&self) -> usize;

    /// Write `s(x, t)` into `out` (both of length [`ScoreField::dim`]).
    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, t, &mut out)?;
        Ok(out)
    }
}

impl<S: ScoreField + ?Sized> ScoreField for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).eval_into(x, t, out)
    }
}

impl<S: ScoreField + ?Sized> ScoreField for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).eval_into(x, t, out)
    }
}

impl<S: ScoreField + ?Sized> ScoreField for Arc<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).eval_into(x, t, out)
    }
}

/// The trivial field `s ≡ 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore(pub usize);

impl ScoreField for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn eval_into(&self, _x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_time(t)?;
        out.fill(0.0);
        Ok(())
    }
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("score requested at t = {t}; need t > 0")))
    }
}

/// Log-sum-exp normalisation of `logits` in place into probabilities.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        total += *l;
    }
    for l in logits.iter_mut() {
        *l /= total;
    }
}
