use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{w1_assignment, w1_subsampled};
use crate::par::Execution;
use crate::points::Points;
use crate::rng::{self, Stage};
use crate::samplers::{run_batch, Churn, SamplerSpec};
use crate::schedule::{edm_time_grid, RestartConfig, RestartLevel, SolverKind, TimeGrid, EDM_RHO};
use crate::score::{EmpiricalDataset, ScoreField};

use super::dataset::sample_true_at;

/// Pipeline around the sampler under test.
///
/// Outside `[window_t_min, window_t_max]` every run uses the Euler ODE:
/// `prior_steps` steps from `t_prior` down to the window, and `tail_steps`
/// steps from the window down to `t_end`, followed by one last Euler step to
/// `t = 0` with the score at `t_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecompositionSetup {
    pub t_prior: f64,
    pub window_t_min: f64,
    pub window_t_max: f64,
    pub prior_steps: usize,
    pub tail_steps: usize,
    pub t_end: f64,
    pub n_samples: usize,
    /// Compute each W1 on this many rows per set instead of all `n_samples`.
    pub w1_subsample: Option<usize>,
}

impl Default for DecompositionSetup {
    fn default() -> Self {
        Self {
            t_prior: 5.0,
            window_t_min: 1.0,
            window_t_max: 1.5,
            prior_steps: 64,
            tail_steps: 128,
            t_end: 1e-3,
            n_samples: 1000,
            w1_subsample: None,
        }
    }
}

impl DecompositionSetup {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.t_end
            && self.t_end < self.window_t_min
            && self.window_t_min < self.window_t_max
            && self.window_t_max <= self.t_prior
            && self.t_prior.is_finite();
        if !ok {
            return Err(Error::config("need 0 < t_end < window_t_min < window_t_max <= t_prior"));
        }
        if self.prior_steps == 0 || self.tail_steps == 0 || self.n_samples == 0 {
            return Err(Error::config("step counts and n_samples must be positive"));
        }
        Ok(())
    }

    fn prior_grid(&self) -> Result<Option<TimeGrid>> {
        if self.window_t_max == self.t_prior {
            return Ok(None);
        }
        edm_time_grid(self.window_t_max, self.t_prior, self.prior_steps + 1, EDM_RHO).map(Some)
    }

    fn tail_grid(&self) -> Result<TimeGrid> {
        edm_time_grid(self.t_end, self.window_t_min, self.tail_steps + 1, EDM_RHO)?.with_terminal_zero()
    }
}

/// A sampler restricted to the window, described by its sweep hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowSampler {
    Ode {
        steps: usize,
        #[serde(default = "heun")]
        solver: SolverKind,
    },
    Sde {
        steps: usize,
        noise_mult: f64,
    },
    ImprovedSde {
        steps: usize,
        s_churn: f64,
    },
    /// One Restart interval spanning the whole window, entered after a main
    /// leg of `n_main` grid points (defaults to `n_restart`).
    Restart {
        n_restart: usize,
        k: usize,
        #[serde(default)]
        n_main: Option<usize>,
        #[serde(default = "heun")]
        main_solver: SolverKind,
        #[serde(default = "heun")]
        restart_solver: SolverKind,
    },
}

fn heun() -> SolverKind {
    SolverKind::Heun
}

impl WindowSampler {
    pub fn name(&self) -> &'static str {
        match self {
            WindowSampler::Ode { .. } => "ode",
            WindowSampler::Sde { .. } => "sde",
            WindowSampler::ImprovedSde { .. } => "improved_sde",
            WindowSampler::Restart { .. } => "restart",
        }
    }

    /// Full sampler spec over `[t_min, t_max]`. "Steps" count grid intervals.
    pub fn to_spec(&self, t_min: f64, t_max: f64) -> Result<SamplerSpec> {
        let grid = |steps: usize| {
            if steps == 0 {
                return Err(Error::config("window samplers need at least one step"));
            }
            edm_time_grid(t_min, t_max, steps + 1, EDM_RHO)
        };
        Ok(match *self {
            WindowSampler::Ode { steps, solver } => SamplerSpec::Ode {
                grid: grid(steps)?,
                solver,
            },
            WindowSampler::Sde { steps, noise_mult } => SamplerSpec::Sde {
                grid: grid(steps)?,
                noise_mult,
            },
            WindowSampler::ImprovedSde { steps, s_churn } => SamplerSpec::ImprovedSde {
                grid: grid(steps)?,
                churn: Churn::new(s_churn),
            },
            WindowSampler::Restart {
                n_restart,
                k,
                n_main,
                main_solver,
                restart_solver,
            } => {
                let mut config = RestartConfig::new(
                    n_main.unwrap_or(n_restart),
                    t_min,
                    t_max,
                    vec![RestartLevel::new(n_restart, k, t_min, t_max)],
                );
                config.terminal_zero = false;
                SamplerSpec::Restart {
                    config,
                    main_solver,
                    restart_solver,
                    churn: None,
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    pub total_w1: f64,
    pub contracted_w1: f64,
    pub additional_w1: f64,
    /// Window-sampler NFE per trajectory.
    pub nfe: usize,
    pub spec: SamplerSpec,
    pub seed: u64,
    pub n_samples: usize,
}

/// Per-seed populations that do not depend on the window sampler.
///
/// Stream layout for master seed `s`: prior noise from `(s, Prior, 0)`,
/// true `p_{t_max}` draws from `(s, TrueDraw, 0)`, `p_0` draws from
/// `(s, DataDraw, 0)`, and the window sampler seed `derive_seed(s, Window, 0)`,
/// shared by the p-run and the q-run.
#[derive(Debug, Clone)]
pub struct DecompositionContext {
    pub setup: DecompositionSetup,
    pub seed: u64,
    /// p-run state entering the window (prior + Euler ODE to `window_t_max`).
    pub p_enter: Points,
    /// Exact draws from `p_{window_t_max}`.
    pub q_enter: Points,
    /// Draws from the data distribution.
    pub p0: Points,
    window_seed: u64,
    tail: TimeGrid,
}

impl DecompositionContext {
    pub fn new<F: ScoreField + ?Sized>(
        ds: &EmpiricalDataset,
        score: &F,
        setup: &DecompositionSetup,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        setup.validate()?;
        let d = ds.points().dim();
        if score.dim() != d {
            return Err(Error::config(format!("score dimension {} != data dimension {d}", score.dim())));
        }
        let n = setup.n_samples;
        let mut prior = vec![0.0; n * d];
        rng::fill_normal(&mut rng::stream(seed, Stage::Prior, 0), &mut prior);
        prior.iter_mut().for_each(|v| *v *= setup.t_prior);
        let mut p_enter = Points::from_vec(prior, d)?;
        if let Some(grid) = setup.prior_grid()? {
            let spec = SamplerSpec::Ode {
                grid,
                solver: SolverKind::Euler,
            };
            p_enter = run_batch(score, &p_enter, &spec, 0, exec)?.points;
        }
        let q_enter = sample_true_at(ds, setup.window_t_max, n, &mut rng::stream(seed, Stage::TrueDraw, 0))?;
        let p0 = sample_true_at(ds, 0.0, n, &mut rng::stream(seed, Stage::DataDraw, 0))?;
        Ok(Self {
            setup: setup.clone(),
            seed,
            p_enter,
            q_enter,
            p0,
            window_seed: rng::derive_seed(seed, Stage::Window, 0),
            tail: setup.tail_grid()?,
        })
    }

    /// Window sampler followed by the tail ODE, from `start`.
    pub fn finish<F: ScoreField + ?Sized>(
        &self,
        score: &F,
        start: &Points,
        spec: &SamplerSpec,
        exec: Execution,
    ) -> Result<(Points, usize)> {
        let window = run_batch(score, start, spec, self.window_seed, exec)?;
        let tail = SamplerSpec::Ode {
            grid: self.tail.clone(),
            solver: SolverKind::Euler,
        };
        let out = run_batch(score, &window.points, &tail, 0, exec)?;
        Ok((out.points, window.nfe))
    }

    pub fn decompose<F: ScoreField + ?Sized>(
        &self,
        score: &F,
        spec: &SamplerSpec,
        exec: Execution,
    ) -> Result<ErrorDecomposition> {
        self.check_window(spec)?;
        let (p_run, nfe) = self.finish(score, &self.p_enter, spec, exec)?;
        let (q_run, _) = self.finish(score, &self.q_enter, spec, exec)?;
        let w1 = |a: &Points, b: &Points, stream: u64| match self.setup.w1_subsample {
            Some(m) => w1_subsampled(a, b, m, rng::derive_seed(self.seed, Stage::Subsample, stream), exec),
            None => w1_assignment(a, b, exec),
        };
        Ok(ErrorDecomposition {
            contracted_w1: w1(&p_run, &q_run, 0)?,
            additional_w1: w1(&q_run, &self.p0, 1)?,
            total_w1: w1(&p_run, &self.p0, 2)?,
            nfe,
            spec: spec.clone(),
            seed: self.seed,
            n_samples: self.setup.n_samples,
        })
    }

    fn check_window(&self, spec: &SamplerSpec) -> Result<()> {
        let (start, end) = match spec {
            SamplerSpec::Ode { grid, .. } | SamplerSpec::Sde { grid, .. } | SamplerSpec::ImprovedSde { grid, .. } => {
                (grid.first(), grid.last())
            }
            SamplerSpec::Restart { config, .. } => {
                let g = config.main_grid()?;
                (g.first(), g.last())
            }
        };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        if !close(start, self.setup.window_t_max) || !close(end, self.setup.window_t_min) {
            return Err(Error::config(format!(
                "sampler covers [{end}, {start}], window is [{}, {}]",
                self.setup.window_t_min, self.setup.window_t_max
            )));
        }
        Ok(())
    }
}

/// Total / contracted / additional W1 of `spec` run inside the window.
///
/// Convenience wrapper building a one-off [`DecompositionContext`]; sweeps
/// reuse contexts across specs.
pub fn decompose_errors<F: ScoreField + ?Sized>(
    ds: &EmpiricalDataset,
    score: &F,
    spec: &SamplerSpec,
    setup: &DecompositionSetup,
    seed: u64,
    exec: Execution,
) -> Result<ErrorDecomposition> {
    DecompositionContext::new(ds, score, setup, seed, exec)?.decompose(score, spec, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{build_synthetic_dataset, SyntheticSpec};

    fn small() -> (EmpiricalDataset, DecompositionSetup) {
        let spec = SyntheticSpec {
            count: 200,
            ambient_dim: 6,
            ..SyntheticSpec::default()
        };
        let setup = DecompositionSetup {
            n_samples: 60,
            prior_steps: 16,
            tail_steps: 32,
            ..DecompositionSetup::default()
        };
        (build_synthetic_dataset(&spec, 1).unwrap(), setup)
    }

    fn spec(w: WindowSampler, setup: &DecompositionSetup) -> SamplerSpec {
        w.to_spec(setup.window_t_min, setup.window_t_max).unwrap()
    }

    #[test]
    fn restart_without_iterations_equals_ode() {
        let (ds, setup) = small();
        let ode = spec(
            WindowSampler::Ode {
                steps: 4,
                solver: SolverKind::Heun,
            },
            &setup,
        );
        let rs = spec(
            WindowSampler::Restart {
                n_restart: 3,
                k: 0,
                n_main: Some(5),
                main_solver: SolverKind::Heun,
                restart_solver: SolverKind::Heun,
            },
            &setup,
        );
        let a = decompose_errors(&ds, &ds, &ode, &setup, 9, Execution::Sequential).unwrap();
        let b = decompose_errors(&ds, &ds, &rs, &setup, 9, Execution::Sequential).unwrap();
        assert_eq!(
            (a.total_w1, a.contracted_w1, a.additional_w1, a.nfe),
            (b.total_w1, b.contracted_w1, b.additional_w1, b.nfe)
        );
    }

    #[test]
    fn noiseless_sde_equals_euler_ode() {
        let (ds, setup) = small();
        let ode = spec(
            WindowSampler::Ode {
                steps: 6,
                solver: SolverKind::Euler,
            },
            &setup,
        );
        let sde = spec(WindowSampler::Sde { steps: 6, noise_mult: 0.0 }, &setup);
        let a = decompose_errors(&ds, &ds, &ode, &setup, 2, Execution::Parallel).unwrap();
        let b = decompose_errors(&ds, &ds, &sde, &setup, 2, Execution::Parallel).unwrap();
        assert_eq!(a.total_w1, b.total_w1);
        assert_eq!(a.contracted_w1, b.contracted_w1);
    }

    #[test]
    fn q_run_inputs_do_not_depend_on_window_sampler() {
        let (ds, setup) = small();
        let ctx = DecompositionContext::new(&ds, &ds, &setup, 4, Execution::Sequential).unwrap();
        let again = DecompositionContext::new(&ds, &ds, &setup, 4, Execution::Sequential).unwrap();
        assert_eq!(ctx.q_enter, again.q_enter);
        assert_eq!(ctx.p0, again.p0);
        // same window noise for p-run and q-run: identical starts give identical ends
        let sde = spec(WindowSampler::Sde { steps: 5, noise_mult: 1.0 }, &setup);
        let (a, _) = ctx.finish(&ds, &ctx.q_enter, &sde, Execution::Sequential).unwrap();
        let (b, _) = again.finish(&ds, &again.q_enter, &sde, Execution::Sequential).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_starts_have_zero_contracted_error() {
        let (ds, setup) = small();
        let mut ctx = DecompositionContext::new(&ds, &ds, &setup, 4, Execution::Sequential).unwrap();
        ctx.p_enter = ctx.q_enter.clone();
        let sde = spec(WindowSampler::Sde { steps: 5, noise_mult: 1.0 }, &setup);
        let out = ctx.decompose(&ds, &sde, Execution::Sequential).unwrap();
        assert_eq!(out.contracted_w1, 0.0);
        assert_eq!(out.total_w1, out.additional_w1);
    }

    #[test]
    fn spec_outside_window_rejected() {
        let (ds, setup) = small();
        let bad = WindowSampler::Ode {
            steps: 4,
            solver: SolverKind::Euler,
        }
        .to_spec(0.5, 1.5)
        .unwrap();
        assert!(matches!(
            decompose_errors(&ds, &ds, &bad, &setup, 0, Execution::Sequential),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn window_nfe_is_reported() {
        let (ds, setup) = small();
        let rs = spec(
            WindowSampler::Restart {
                n_restart: 3,
                k: 2,
                n_main: None,
                main_solver: SolverKind::Euler,
                restart_solver: SolverKind::Heun,
            },
            &setup,
        );
        let out = decompose_errors(&ds, &ds, &rs, &setup, 0, Execution::Sequential).unwrap();
        assert_eq!(out.nfe, 2 + 2 * 4);
        assert!(out.total_w1.is_finite() && out.total_w1 > 0.0);
    }
}
