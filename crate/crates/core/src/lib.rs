//! Samplers for differential-equation generative models over analytically
//! tractable score fields.
//!
//! The crate is organised bottom-up:
//!
//! - [`schedule`]: EDM time grids, Restart interval embedding and NFE accounting.
//! - [`score`]: the [`ScoreField`] abstraction with closed-form mixture and
//!   empirical scores, a controlled-error wrapper, guidance and a small MLP.
//! - [`samplers`]: Euler/Heun ODE, Euler–Maruyama SDE family, churn SDE and
//!   the (multi-level) Restart sampler.
//! - [`metrics`]: Gaussian tail function, contraction factor, exact W1 via
//!   assignment and the maximal Gaussian coupling.
//! - [`experiments`]: synthetic dataset, error decomposition, sweeps, Pareto
//!   frontiers and the coupled contraction study.
//!
//! Trajectory batches and sweep cells run on rayon when the `parallel`
//! feature is enabled (the default); see [`Execution`].

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod io;
pub mod metrics;
mod par;
mod points;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod score;

pub use error::{Error, Result};
pub use par::Execution;
pub use points::Points;
pub use samplers::{SampleBatch, SamplerSpec};
pub use schedule::{RestartConfig, RestartLevel, SolverKind, TimeGrid};
pub use score::ScoreField;
