use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::par::{self, Execution};
use crate::rng::{self, Stage};
use crate::samplers::SamplerSpec;
use crate::schedule::SolverKind;
use crate::score::{EmpiricalDataset, ScoreField};

use super::decompose::{DecompositionContext, DecompositionSetup, ErrorDecomposition, WindowSampler};

/// Repetitions averaged into one record.
pub const DEFAULT_REPETITIONS: usize = 5;

/// Flat CSV row for one sweep cell, averaged over its repetitions.
///
/// Columns that do not apply to the sampler are left empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub sampler: String,
    pub solver_main: Option<SolverKind>,
    pub solver_restart: Option<SolverKind>,
    pub nfe: usize,
    pub n_main: Option<usize>,
    pub n_restart: Option<usize>,
    pub k_iters: Option<usize>,
    pub t_min: f64,
    pub t_max: f64,
    pub noise_mult: Option<f64>,
    pub s_churn: Option<f64>,
    /// Master seed; repetition `r` uses `derive_seed(seed_group, Repetition, r)`.
    pub seed_group: u64,
    pub n_samples: usize,
    pub total_w1: f64,
    pub contracted_w1: f64,
    pub additional_w1: f64,
    pub wall_ms: u64,
}

impl SweepRecord {
    fn new(cell: &WindowSampler, spec: &SamplerSpec, setup: &DecompositionSetup, seed_group: u64) -> Self {
        let mut r = SweepRecord {
            sampler: cell.name().to_owned(),
            solver_main: None,
            solver_restart: None,
            nfe: spec.expected_nfe().unwrap_or(0),
            n_main: None,
            n_restart: None,
            k_iters: None,
            t_min: setup.window_t_min,
            t_max: setup.window_t_max,
            noise_mult: None,
            s_churn: None,
            seed_group,
            n_samples: setup.n_samples,
            total_w1: f64::NAN,
            contracted_w1: f64::NAN,
            additional_w1: f64::NAN,
            wall_ms: 0,
        };
        match (cell, spec) {
            (WindowSampler::Ode { steps, solver }, _) => {
                r.solver_main = Some(*solver);
                r.n_main = Some(steps + 1);
            }
            (WindowSampler::Sde { steps, noise_mult }, _) => {
                r.solver_main = Some(SolverKind::Euler);
                r.n_main = Some(steps + 1);
                r.noise_mult = Some(*noise_mult);
            }
            (WindowSampler::ImprovedSde { steps, s_churn }, _) => {
                r.solver_main = Some(SolverKind::Heun);
                r.n_main = Some(steps + 1);
                r.s_churn = Some(*s_churn);
            }
            (
                WindowSampler::Restart {
                    n_restart,
                    k,
                    main_solver,
                    restart_solver,
                    ..
                },
                SamplerSpec::Restart { config, .. },
            ) => {
                r.solver_main = Some(*main_solver);
                r.solver_restart = Some(*restart_solver);
                r.n_main = Some(config.n_main);
                r.n_restart = Some(*n_restart);
                r.k_iters = Some(*k);
            }
            _ => unreachable!("window sampler and spec kinds agree"),
        }
        r
    }

    pub fn is_valid(&self) -> bool {
        self.total_w1.is_finite() && self.contracted_w1.is_finite() && self.additional_w1.is_finite()
    }
}

/// A failed repetition of a sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: usize,
    pub sampler: String,
    pub repetition: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub cells: Vec<WindowSampler>,
}

impl SweepGrid {
    pub fn new(cells: Vec<WindowSampler>) -> Self {
        Self { cells }
    }

    pub fn ode(steps: &[usize]) -> Self {
        Self::new(
            steps
                .iter()
                .map(|&steps| WindowSampler::Ode {
                    steps,
                    solver: SolverKind::Heun,
                })
                .collect(),
        )
    }

    /// SDE steps × noise multipliers.
    pub fn sde(steps: &[usize], noise_mults: &[f64]) -> Self {
        let mut cells = Vec::new();
        for &steps in steps {
            for &noise_mult in noise_mults {
                cells.push(WindowSampler::Sde { steps, noise_mult });
            }
        }
        Self::new(cells)
    }

    /// Restart legs × iteration counts, both legs Heun.
    pub fn restart(n_restarts: &[usize], ks: &[usize]) -> Self {
        let mut cells = Vec::new();
        for &n_restart in n_restarts {
            for &k in ks {
                cells.push(WindowSampler::Restart {
                    n_restart,
                    k,
                    n_main: None,
                    main_solver: SolverKind::Heun,
                    restart_solver: SolverKind::Heun,
                });
            }
        }
        Self::new(cells)
    }

    pub fn improved_sde(cells: impl IntoIterator<Item = (usize, f64)>) -> Self {
        Self::new(
            cells
                .into_iter()
                .map(|(steps, s_churn)| WindowSampler::ImprovedSde { steps, s_churn })
                .collect(),
        )
    }

    pub fn extend(mut self, other: SweepGrid) -> Self {
        self.cells.extend(other.cells);
        self
    }

    /// The full hyperparameter grid of the synthetic study.
    ///
    /// ODE steps `{20,…,640}`; SDE NFE `{20,…,320}` × multipliers
    /// `{0,…,8}`; Restart with 40-step legs and `K ∈ {0,5,…,35}`, plus legs of
    /// 2–7 steps × `K ∈ {5,10,…,25}`; churned SDE with `S_churn ∈ {0,…,64}`
    /// at 40 steps, plus steps `{20,…,320}` × `{0.2·steps, 0.5·steps, 20, 60}`.
    pub fn full() -> Self {
        let ks: Vec<usize> = (0..8).map(|i| 5 * i).collect();
        let churn_fixed = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0, 64.0].map(|s| (40, s));
        let churn_grid = [20usize, 40, 80, 160, 320]
            .into_iter()
            .flat_map(|n| [0.2 * n as f64, 0.5 * n as f64, 20.0, 60.0].map(move |s| (n, s)));
        Self::ode(&[20, 40, 80, 160, 320, 640])
            .extend(Self::sde(
                &[20, 40, 80, 160, 320],
                &[0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 4.0, 8.0],
            ))
            .extend(Self::restart(&[41], &ks))
            .extend(Self::restart(&[3, 4, 5, 6, 7, 8], &[5, 10, 15, 20, 25]))
            .extend(Self::improved_sde(churn_fixed.into_iter().chain(churn_grid)))
    }

    /// Three cells each for ODE, SDE and Restart, aligned on the window
    /// NFE values 12, 20 and 36.
    pub fn smoke() -> Self {
        Self::ode(&[6, 10, 18])
            .extend(Self::sde(&[12, 20, 36], &[1.0]))
            .extend(Self::restart(&[3], &[2, 4, 8]))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepOptions {
    pub repetitions: usize,
    /// Record wall-clock time per cell; off by default so outputs are
    /// reproducible byte for byte.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            repetitions: DEFAULT_REPETITIONS,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// One record per grid cell, in grid order.
    pub records: Vec<SweepRecord>,
    pub failures: Vec<CellFailure>,
}

/// Run every cell of `grid` for each repetition seed and average.
///
/// Repetition contexts (prior leg, true draws) are shared by all cells. A
/// cell with any failed repetition is reported with NaN errors and its
/// failures are listed; other cells are unaffected.
pub fn run_sweep<F: ScoreField + ?Sized>(
    ds: &EmpiricalDataset,
    score: &F,
    grid: &SweepGrid,
    setup: &DecompositionSetup,
    options: &SweepOptions,
    seed: u64,
    exec: Execution,
) -> Result<SweepOutcome> {
    setup.validate()?;
    let reps = options.repetitions.max(1);
    let contexts = par::map_indexed(reps, exec, |r| {
        let s = rng::derive_seed(seed, Stage::Repetition, r as u64);
        DecompositionContext::new(ds, score, setup, s, Execution::Sequential)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let jobs = grid.len() * reps;
    let results = par::map_indexed(jobs, exec, |job| {
        let (cell, r) = (job / reps, job % reps);
        let start = Instant::now();
        let out = grid.cells[cell]
            .to_spec(setup.window_t_min, setup.window_t_max)
            .and_then(|spec| contexts[r].decompose(score, &spec, Execution::Sequential));
        (out, start.elapsed())
    });

    let mut records = Vec::with_capacity(grid.len());
    let mut failures = Vec::new();
    for (cell, chunk) in grid.cells.iter().zip(results.chunks(reps)) {
        let spec = cell.to_spec(setup.window_t_min, setup.window_t_max);
        let mut record = match &spec {
            Ok(spec) => SweepRecord::new(cell, spec, setup, seed),
            Err(_) => SweepRecord::new(cell, &placeholder_spec(cell, setup), setup, seed),
        };
        let ok: Vec<&ErrorDecomposition> = chunk.iter().filter_map(|(r, _)| r.as_ref().ok()).collect();
        for (rep, (res, _)) in chunk.iter().enumerate() {
            if let Err(e) = res {
                failures.push(CellFailure {
                    cell: records.len(),
                    sampler: cell.name().to_owned(),
                    repetition: rep,
                    message: e.to_string(),
                });
            }
        }
        if ok.len() == reps {
            let mean = |f: fn(&ErrorDecomposition) -> f64| ok.iter().map(|d| f(d)).sum::<f64>() / reps as f64;
            record.total_w1 = mean(|d| d.total_w1);
            record.contracted_w1 = mean(|d| d.contracted_w1);
            record.additional_w1 = mean(|d| d.additional_w1);
            record.nfe = ok[0].nfe;
        }
        if options.timing {
            record.wall_ms = chunk.iter().map(|(_, t)| t.as_millis() as u64).sum();
        }
        records.push(record);
    }
    Ok(SweepOutcome { records, failures })
}

/// Stand-in used only to fill hyperparameter columns of an invalid cell.
fn placeholder_spec(cell: &WindowSampler, setup: &DecompositionSetup) -> SamplerSpec {
    let safe = match *cell {
        WindowSampler::Ode { solver, .. } => WindowSampler::Ode { steps: 1, solver },
        WindowSampler::Sde { noise_mult, .. } => WindowSampler::Sde { steps: 1, noise_mult },
        WindowSampler::ImprovedSde { s_churn, .. } => WindowSampler::ImprovedSde { steps: 1, s_churn },
        WindowSampler::Restart {
            k,
            main_solver,
            restart_solver,
            ..
        } => WindowSampler::Restart {
            n_restart: 2,
            k,
            n_main: Some(2),
            main_solver,
            restart_solver,
        },
    };
    safe.to_spec(setup.window_t_min, setup.window_t_max)
        .expect("minimal window spec is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{build_synthetic_dataset, SyntheticSpec};

    fn tiny() -> (EmpiricalDataset, DecompositionSetup) {
        let spec = SyntheticSpec {
            count: 100,
            ambient_dim: 5,
            ..SyntheticSpec::default()
        };
        let setup = DecompositionSetup {
            n_samples: 30,
            prior_steps: 8,
            tail_steps: 16,
            ..DecompositionSetup::default()
        };
        (build_synthetic_dataset(&spec, 2).unwrap(), setup)
    }

    #[test]
    fn full_grid_sizes() {
        assert_eq!(SweepGrid::ode(&[20, 40, 80, 160, 320, 640]).len(), 6);
        assert_eq!(SweepGrid::full().len(), 6 + 40 + 8 + 30 + 9 + 20);
        assert_eq!(SweepGrid::smoke().len(), 9);
    }

    #[test]
    fn one_record_per_cell_averaged_over_repetitions() {
        let (ds, setup) = tiny();
        let grid = SweepGrid::ode(&[4]);
        let out = run_sweep(&ds, &ds, &grid, &setup, &SweepOptions::default(), 7, Execution::Sequential).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        let mean: f64 = (0..5)
            .map(|i| {
                let spec = grid.cells[0].to_spec(1.0, 1.5).unwrap();
                let s = rng::derive_seed(7, Stage::Repetition, i);
                super::super::decompose_errors(&ds, &ds, &spec, &setup, s, Execution::Sequential)
                    .unwrap()
                    .total_w1
            })
            .sum::<f64>()
            / 5.0;
        assert!((r.total_w1 - mean).abs() < 1e-12);
        assert_eq!((r.nfe, r.n_main, r.seed_group), (8, Some(5), 7));
    }

    #[test]
    fn failures_do_not_drop_records() {
        let (ds, setup) = tiny();
        let grid = SweepGrid::new(vec![
            WindowSampler::Ode {
                steps: 0,
                solver: SolverKind::Euler,
            },
            WindowSampler::Sde { steps: 3, noise_mult: 0.5 },
        ]);
        let opts = SweepOptions {
            repetitions: 2,
            timing: false,
        };
        let out = run_sweep(&ds, &ds, &grid, &setup, &opts, 1, Execution::Parallel).unwrap();
        assert_eq!(out.records.len(), 2);
        assert!(!out.records[0].is_valid());
        assert!(out.records[1].is_valid());
        assert_eq!(out.failures.len(), 2);
        assert!(out.failures.iter().all(|f| f.cell == 0));
    }

    #[test]
    fn execution_mode_does_not_change_records() {
        let (ds, setup) = tiny();
        let grid = SweepGrid::restart(&[3], &[0, 2]).extend(SweepGrid::sde(&[4], &[1.0]));
        let opts = SweepOptions {
            repetitions: 2,
            timing: false,
        };
        let a = run_sweep(&ds, &ds, &grid, &setup, &opts, 3, Execution::Sequential).unwrap();
        let b = run_sweep(&ds, &ds, &grid, &setup, &opts, 3, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
