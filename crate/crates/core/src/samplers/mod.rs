//! Backward-process samplers.
//!
//! Every sampler is a pure function of `(field, initial points, spec, seed)`.
//! Trajectory `i` draws its noise from `rng::stream(seed, Stage::Sampler, i)`,
//! so batches can be split or parallelised without changing any output.

mod step;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::points::Points;
use crate::rng::{self, Stage};
use crate::schedule::{nfe_count, RestartConfig, SolverKind, TimeGrid};
use crate::score::ScoreField;

pub(crate) use step::Stepper;
pub use step::{euler_step, heun_step, restart_forward, BLOWUP_NORM};

/// Noise-level inflation ("churn") of the improved SDE sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Churn {
    pub s_churn: f64,
    #[serde(default)]
    pub s_min: f64,
    #[serde(default = "f64_max")]
    pub s_max: f64,
    #[serde(default = "one")]
    pub s_noise: f64,
}

fn f64_max() -> f64 {
    f64::MAX
}

fn one() -> f64 {
    1.0
}

impl Churn {
    pub fn new(s_churn: f64) -> Self {
        Self {
            s_churn,
            s_min: 0.0,
            s_max: f64::MAX,
            s_noise: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.s_churn >= 0.0 && self.s_churn.is_finite()) {
            return Err(Error::config("s_churn must be >= 0"));
        }
        if !(self.s_min >= 0.0 && self.s_min <= self.s_max) {
            return Err(Error::config("churn needs 0 <= s_min <= s_max"));
        }
        if !(self.s_noise > 0.0 && self.s_noise.is_finite()) {
            return Err(Error::config("s_noise must be positive"));
        }
        Ok(())
    }

    /// `γ = min(S_churn / n_steps, √2 − 1)`, the in-range inflation factor.
    pub fn gamma(&self, n_steps: usize) -> f64 {
        (self.s_churn / n_steps as f64).min(std::f64::consts::SQRT_2 - 1.0)
    }

    /// Inflation applied at noise level `t`.
    pub fn gamma_at(&self, t: f64, n_steps: usize) -> f64 {
        if t >= self.s_min && t <= self.s_max {
            self.gamma(n_steps)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    /// Backward ODE.
    Ode { grid: TimeGrid, solver: SolverKind },
    /// Euler–Maruyama on `dx = −(1+m)·t·s dt + √(2mt) dW`; `m = 1` is the
    /// reverse-time SDE and `m = 0` the Euler ODE.
    Sde { grid: TimeGrid, noise_mult: f64 },
    /// Churned Heun steps.
    ImprovedSde { grid: TimeGrid, churn: Churn },
    Restart {
        config: RestartConfig,
        main_solver: SolverKind,
        restart_solver: SolverKind,
        /// Optional churn on backward-leg steps (main and Restart legs).
        #[serde(default)]
        churn: Option<Churn>,
    },
}

impl SamplerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerSpec::Ode { .. } => "ode",
            SamplerSpec::Sde { .. } => "sde",
            SamplerSpec::ImprovedSde { .. } => "improved_sde",
            SamplerSpec::Restart { .. } => "restart",
        }
    }

    /// Start time of the backward process.
    pub fn t_start(&self) -> Result<f64> {
        Ok(match self {
            SamplerSpec::Ode { grid, .. }
            | SamplerSpec::Sde { grid, .. }
            | SamplerSpec::ImprovedSde { grid, .. } => grid.first(),
            SamplerSpec::Restart { config, .. } => config.main_grid()?.first(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerSpec::Ode { grid, .. } | SamplerSpec::Sde { grid, .. } | SamplerSpec::ImprovedSde { grid, .. }
                if grid.first() <= 0.0 =>
            {
                Err(Error::config("sampler grid must start at t > 0"))
            }
            SamplerSpec::Sde { noise_mult, .. } if !(*noise_mult >= 0.0 && noise_mult.is_finite()) => {
                Err(Error::config("SDE noise multiplier must be >= 0"))
            }
            SamplerSpec::ImprovedSde { churn, .. } => churn.validate(),
            SamplerSpec::Restart { config, churn, .. } => {
                config.check_embedded()?;
                churn.as_ref().map_or(Ok(()), Churn::validate)
            }
            _ => Ok(()),
        }
    }

    /// Closed-form score evaluations per trajectory.
    pub fn expected_nfe(&self) -> Result<usize> {
        Ok(match self {
            SamplerSpec::Ode { grid, solver } => grid.nfe(*solver),
            SamplerSpec::Sde { grid, .. } => grid.n_steps(),
            SamplerSpec::ImprovedSde { grid, .. } => grid.nfe(SolverKind::Heun),
            SamplerSpec::Restart {
                config,
                main_solver,
                restart_solver,
                ..
            } => nfe_count(config, *main_solver, *restart_solver),
        })
    }
}

/// Generated points plus their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Points,
    /// Score evaluations per trajectory, counted during sampling.
    pub nfe: usize,
    pub seed: u64,
    pub spec: SamplerSpec,
}

/// Precomputed, validated form of a spec.
enum Plan {
    Ode(TimeGrid, SolverKind),
    Sde(TimeGrid, f64),
    Churned(TimeGrid, Churn),
    Restart(RestartPlan),
}

struct RestartPlan {
    main: TimeGrid,
    main_solver: SolverKind,
    restart_solver: SolverKind,
    /// `(t_min, t_max, s_noise, K, leg grid)` per level.
    levels: Vec<(f64, f64, f64, usize, TimeGrid)>,
    churn: Option<(Churn, f64)>,
}

impl Plan {
    fn new(spec: &SamplerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            SamplerSpec::Ode { grid, solver } => Plan::Ode(grid.clone(), *solver),
            SamplerSpec::Sde { grid, noise_mult } => Plan::Sde(grid.clone(), *noise_mult),
            SamplerSpec::ImprovedSde { grid, churn } => Plan::Churned(grid.clone(), *churn),
            SamplerSpec::Restart {
                config,
                main_solver,
                restart_solver,
                churn,
            } => {
                let main = config.check_embedded()?;
                let levels = config
                    .levels
                    .iter()
                    .map(|l| Ok((l.t_min, l.t_max, l.s_noise, l.k_iterations, l.grid(config.rho)?)))
                    .collect::<Result<Vec<_>>>()?;
                let churn = churn.map(|c| (c, c.gamma(main.n_steps())));
                Plan::Restart(RestartPlan {
                    main,
                    main_solver: *main_solver,
                    restart_solver: *restart_solver,
                    levels,
                    churn,
                })
            }
        })
    }

    fn run<F: ScoreField + ?Sized>(&self, f: &F, x: &mut [f64], rng: &mut rng::StreamRng) -> Result<usize> {
        let mut st = Stepper::new(f);
        match self {
            Plan::Ode(grid, solver) => st.ode(*solver, x, grid)?,
            Plan::Sde(grid, m) => {
                for (t_cur, t_next) in grid.steps() {
                    st.sde(x, t_cur, t_next, *m, rng)?;
                }
            }
            Plan::Churned(grid, churn) => {
                let n = grid.n_steps();
                for (t_cur, t_next) in grid.steps() {
                    st.churn(x, t_cur, t_next, churn.gamma_at(t_cur, n), churn.s_noise, rng)?;
                }
            }
            Plan::Restart(plan) => plan.run(&mut st, x, rng)?,
        }
        Ok(st.nfe)
    }
}

impl RestartPlan {
    fn leg_step<F: ScoreField + ?Sized>(
        &self,
        st: &mut Stepper<'_, F>,
        solver: SolverKind,
        x: &mut [f64],
        t_cur: f64,
        t_next: f64,
        rng: &mut rng::StreamRng,
    ) -> Result<()> {
        match self.churn {
            Some((c, gamma)) if solver == SolverKind::Heun && t_cur >= c.s_min && t_cur <= c.s_max => {
                st.churn(x, t_cur, t_next, gamma, c.s_noise, rng)
            }
            _ => st.step(solver, x, t_cur, t_next),
        }
    }

    fn run<F: ScoreField + ?Sized>(&self, st: &mut Stepper<'_, F>, x: &mut [f64], rng: &mut rng::StreamRng) -> Result<()> {
        for (t_cur, t_next) in self.main.steps() {
            self.leg_step(st, self.main_solver, x, t_cur, t_next, rng)?;
            let Some((t_min, t_max, s_noise, k, leg)) = self.levels.iter().find(|l| l.0 == t_next) else {
                continue;
            };
            for _ in 0..*k {
                restart_forward(x, *t_min, *t_max, *s_noise, rng);
                for (a, b) in leg.steps() {
                    self.leg_step(st, self.restart_solver, x, a, b, rng)?;
                }
            }
        }
        Ok(())
    }
}

/// Run `spec` from every row of `x0`.
pub fn run_batch<F: ScoreField + ?Sized>(
    f: &F,
    x0: &Points,
    spec: &SamplerSpec,
    seed: u64,
    exec: Execution,
) -> Result<SampleBatch> {
    if x0.dim() != f.dim() {
        return Err(Error::config(format!(
            "initial points have dimension {}, score field {}",
            x0.dim(),
            f.dim()
        )));
    }
    if !x0.is_finite() {
        return Err(Error::config("initial points must be finite"));
    }
    let plan = Plan::new(spec)?;
    let mut points = x0.clone();
    let dim = points.dim();
    let results = par::map_chunks_mut(points.as_mut_slice(), dim, exec, |i, row| {
        let mut rng = rng::stream(seed, Stage::Sampler, i as u64);
        plan.run(f, row, &mut rng)
    });
    let nfe = collect_nfe(results)?.unwrap_or(spec.expected_nfe()?);
    Ok(SampleBatch {
        points,
        nfe,
        seed,
        spec: spec.clone(),
    })
}

/// Fold per-trajectory results into one NFE, or a blowup/first error.
fn collect_nfe(results: Vec<Result<usize>>) -> Result<Option<usize>> {
    let mut nfe = None;
    let mut blowups = 0;
    let mut first: Option<Error> = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(n) => {
                debug_assert!(nfe.is_none_or(|m| m == n), "trajectories disagree on NFE");
                nfe.get_or_insert(n);
            }
            Err(Error::Blowup { step, t_cur, t_next, .. }) => {
                blowups += 1;
                first.get_or_insert(Error::Blowup {
                    count: 0,
                    trajectory: i,
                    step,
                    t_cur,
                    t_next,
                });
            }
            Err(other) => return Err(other),
        }
    }
    match first {
        Some(Error::Blowup {
            trajectory,
            step,
            t_cur,
            t_next,
            ..
        }) => Err(Error::Blowup {
            count: blowups,
            trajectory,
            step,
            t_cur,
            t_next,
        }),
        _ => Ok(nfe),
    }
}

pub fn ode_solve<F: ScoreField + ?Sized>(f: &F, x0: &Points, grid: &TimeGrid, solver: SolverKind) -> Result<SampleBatch> {
    let spec = SamplerSpec::Ode {
        grid: grid.clone(),
        solver,
    };
    run_batch(f, x0, &spec, 0, Execution::default())
}

pub fn sde_solve<F: ScoreField + ?Sized>(
    f: &F,
    x0: &Points,
    grid: &TimeGrid,
    noise_mult: f64,
    seed: u64,
) -> Result<SampleBatch> {
    let spec = SamplerSpec::Sde {
        grid: grid.clone(),
        noise_mult,
    };
    run_batch(f, x0, &spec, seed, Execution::default())
}

pub fn improved_sde_solve<F: ScoreField + ?Sized>(
    f: &F,
    x0: &Points,
    grid: &TimeGrid,
    churn: Churn,
    seed: u64,
) -> Result<SampleBatch> {
    let spec = SamplerSpec::ImprovedSde {
        grid: grid.clone(),
        churn,
    };
    run_batch(f, x0, &spec, seed, Execution::default())
}

pub fn restart_sample<F: ScoreField + ?Sized>(
    f: &F,
    x0: &Points,
    config: &RestartConfig,
    main_solver: SolverKind,
    restart_solver: SolverKind,
    seed: u64,
) -> Result<SampleBatch> {
    let spec = SamplerSpec::Restart {
        config: config.clone(),
        main_solver,
        restart_solver,
        churn: None,
    };
    run_batch(f, x0, &spec, seed, Execution::default())
}
