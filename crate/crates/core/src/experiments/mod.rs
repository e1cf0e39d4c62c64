//! Synthetic-data experiments: error decomposition around a sampling
//! window, hyperparameter sweeps, Pareto frontiers and the coupled
//! contraction study.

mod dataset;
mod decay;
mod decompose;
mod pareto;
mod sweep;

pub use dataset::{build_synthetic_dataset, sample_true_at, SyntheticSpec};
pub use decay::{contraction_decay_study, DecayConfig, DecayPoint, DecayStudy};
pub use decompose::{decompose_errors, DecompositionContext, DecompositionSetup, ErrorDecomposition, WindowSampler};
pub use pareto::{pareto_frontier, FrontierRecord, RecordKey};
pub use sweep::{run_sweep, CellFailure, SweepGrid, SweepOptions, SweepOutcome, SweepRecord, DEFAULT_REPETITIONS};
