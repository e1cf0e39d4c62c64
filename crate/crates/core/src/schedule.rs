//! Time discretisation of the backward process.
//!
//! Noise levels follow the `σ(t) = t` convention, so a "time" is also the
//! standard deviation of the Gaussian kernel applied to the data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warping exponent of the EDM grid.
pub const EDM_RHO: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Euler,
    Heun,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Euler => "euler",
            SolverKind::Heun => "heun",
        }
    }

    /// Score evaluations for one step ending at `t_next`.
    pub fn step_nfe(self, t_next: f64) -> usize {
        match self {
            SolverKind::Euler => 1,
            SolverKind::Heun if t_next == 0.0 => 1,
            SolverKind::Heun => 2,
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SolverKind::Euler),
            "heun" => Ok(SolverKind::Heun),
            other => Err(Error::config(format!("unknown solver '{other}'"))),
        }
    }
}

/// Strictly decreasing noise levels `t_0 > t_1 > … > t_{N-1} ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::config("a time grid needs at least two entries"));
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::config("grid times must be finite and non-negative"));
        }
        if times.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("grid times must be strictly decreasing"));
        }
        Ok(Self { times })
    }

    /// Evenly spaced grid from `t_start` down to `t_end` with `n` entries.
    pub fn uniform(t_start: f64, t_end: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::config("a time grid needs at least two entries"));
        }
        let mut times: Vec<f64> = (0..n)
            .map(|i| t_start + (i as f64 / (n - 1) as f64) * (t_end - t_start))
            .collect();
        times[0] = t_start;
        times[n - 1] = t_end;
        Self::new(times)
    }

    /// Append a final `t = 0` entry.
    pub fn with_terminal_zero(mut self) -> Result<Self> {
        if self.last() == 0.0 {
            return Err(Error::config("grid already ends at zero"));
        }
        self.times.push(0.0);
        Ok(self)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `(t_cur, t_next)` pairs in backward order.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).map(|w| (w[0], w[1]))
    }

    /// Score evaluations a solver spends walking this grid.
    pub fn nfe(&self, solver: SolverKind) -> usize {
        self.steps().map(|(_, t_next)| solver.step_nfe(t_next)).sum()
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;

    fn try_from(times: Vec<f64>) -> Result<Self> {
        Self::new(times)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(grid: TimeGrid) -> Self {
        grid.times
    }
}

/// EDM discretisation: `t_i = (t_max^{1/ρ} + i/(n−1)·(t_min^{1/ρ} − t_max^{1/ρ}))^ρ`.
///
/// The endpoints are assigned from the inputs rather than recomputed.
pub fn edm_time_grid(t_min: f64, t_max: f64, n: usize, rho: f64) -> Result<TimeGrid> {
    if !(t_min.is_finite() && t_max.is_finite()) || t_min < 0.0 || t_min >= t_max {
        return Err(Error::config(format!(
            "EDM grid needs 0 <= t_min < t_max, got [{t_min}, {t_max}]"
        )));
    }
    if n < 2 {
        return Err(Error::config("EDM grid needs n >= 2"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::config(format!("rho must be positive, got {rho}")));
    }
    let hi = t_max.powf(1.0 / rho);
    let lo = t_min.powf(1.0 / rho);
    let mut times: Vec<f64> = (0..n)
        .map(|i| (hi + (i as f64 / (n - 1) as f64) * (lo - hi)).powf(rho))
        .collect();
    times[0] = t_max;
    times[n - 1] = t_min;
    TimeGrid::new(times)
}

/// One Restart interval: `k_iterations` rounds of forward noising from
/// `t_min` to `t_max` followed by an `n_restart_steps`-point backward leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartLevel {
    pub n_restart_steps: usize,
    pub k_iterations: usize,
    pub t_min: f64,
    pub t_max: f64,
    #[serde(default = "one")]
    pub s_noise: f64,
}

fn one() -> f64 {
    1.0
}

impl RestartLevel {
    pub fn new(n_restart_steps: usize, k_iterations: usize, t_min: f64, t_max: f64) -> Self {
        Self {
            n_restart_steps,
            k_iterations,
            t_min,
            t_max,
            s_noise: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_restart_steps < 2 {
            return Err(Error::config("restart legs need at least 2 grid points"));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return Err(Error::config(format!(
                "restart interval needs 0 < t_min < t_max, got [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if !(self.s_noise >= 1.0 && self.s_noise.is_finite()) {
            return Err(Error::config(format!("s_noise must be >= 1, got {}", self.s_noise)));
        }
        Ok(())
    }

    /// Per-coordinate variance of the forward kernel, `t_max² − t_min²`.
    pub fn forward_variance(&self) -> f64 {
        self.t_max * self.t_max - self.t_min * self.t_min
    }

    /// Backward-leg grid of one iteration.
    pub fn grid(&self, rho: f64) -> Result<TimeGrid> {
        edm_time_grid(self.t_min, self.t_max, self.n_restart_steps, rho)
    }
}

/// Main backward grid plus the Restart levels embedded in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartConfig {
    /// Number of EDM points on `[main_t_min, main_t_max]`.
    pub n_main: usize,
    pub levels: Vec<RestartLevel>,
    pub main_t_min: f64,
    pub main_t_max: f64,
    #[serde(default = "edm_rho")]
    pub rho: f64,
    /// Append `t = 0` after the EDM points (the full generative process).
    /// Windowed runs that stop at `main_t_min` leave this off.
    #[serde(default = "yes")]
    pub terminal_zero: bool,
}

fn edm_rho() -> f64 {
    EDM_RHO
}

fn yes() -> bool {
    true
}

impl RestartConfig {
    pub fn new(n_main: usize, main_t_min: f64, main_t_max: f64, levels: Vec<RestartLevel>) -> Self {
        Self {
            n_main,
            levels,
            main_t_min,
            main_t_max,
            rho: EDM_RHO,
            terminal_zero: true,
        }
    }

    pub fn main_grid(&self) -> Result<TimeGrid> {
        let grid = edm_time_grid(self.main_t_min, self.main_t_max, self.n_main, self.rho)?;
        if self.terminal_zero && self.main_t_min > 0.0 {
            grid.with_terminal_zero()
        } else {
            Ok(grid)
        }
    }

    fn check_levels(&self) -> Result<()> {
        for level in &self.levels {
            level.validate()?;
        }
        for pair in self.levels.windows(2) {
            if pair[1].t_max > pair[0].t_min {
                return Err(Error::config(format!(
                    "restart levels overlap or are unsorted: [{}, {}] then [{}, {}]",
                    pair[0].t_min, pair[0].t_max, pair[1].t_min, pair[1].t_max
                )));
            }
        }
        Ok(())
    }

    /// Check that every level's `t_min` is a main-grid time the backward
    /// process actually reaches, i.e. the config has been embedded.
    pub fn check_embedded(&self) -> Result<TimeGrid> {
        let grid = self.main_grid()?;
        self.check_levels()?;
        for level in &self.levels {
            if !grid.times()[1..].contains(&level.t_min) {
                return Err(Error::config(format!(
                    "restart t_min {} is not on the main grid; embed the config first",
                    level.t_min
                )));
            }
        }
        Ok(grid)
    }

    pub fn total_restart_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.k_iterations).sum()
    }
}

/// Snap each level's `t_min` to the nearest main-grid time (ties go to the
/// larger time) and re-check ordering and overlap.
pub fn embed_restart_intervals(main: &TimeGrid, config: &RestartConfig) -> Result<RestartConfig> {
    let lo = main.last();
    let hi = main.first();
    // Candidates exclude the starting time (never reached as a step target)
    // and a terminal zero (Restart needs t_min > 0).
    let candidates: Vec<f64> = main.times()[1..].iter().copied().filter(|t| *t > 0.0).collect();
    if candidates.is_empty() {
        return Err(Error::config("main grid has no admissible restart times"));
    }
    let mut out = config.clone();
    for level in &mut out.levels {
        if !(level.t_min >= lo && level.t_min <= hi) {
            return Err(Error::config(format!(
                "restart t_min {} lies outside the main grid [{lo}, {hi}]",
                level.t_min
            )));
        }
        level.t_min = nearest_time(&candidates, level.t_min);
    }
    out.check_levels()?;
    Ok(out)
}

fn nearest_time(candidates: &[f64], target: f64) -> f64 {
    let mut best = candidates[0];
    let mut best_dist = (best - target).abs();
    for &c in &candidates[1..] {
        let dist = (c - target).abs();
        if dist < best_dist || (dist == best_dist && c > best) {
            best = c;
            best_dist = dist;
        }
    }
    best
}

/// Score evaluations per sample of the Restart sampler, in closed form:
///
/// - main leg: `2·N_main − 1` for Heun with a terminal zero (`N_main` Euler),
///   `2·(N_main − 1)` / `N_main − 1` without it;
/// - each Restart iteration: `2·(N_restart − 1)` for Heun, `N_restart − 1`
///   for Euler.
pub fn nfe_count(config: &RestartConfig, main_solver: SolverKind, restart_solver: SolverKind) -> usize {
    let (main_steps, ends_at_zero) = if config.terminal_zero && config.main_t_min > 0.0 {
        (config.n_main, true)
    } else {
        (config.n_main - 1, config.main_t_min == 0.0)
    };
    let main = match main_solver {
        SolverKind::Euler => main_steps,
        SolverKind::Heun if ends_at_zero => 2 * main_steps - 1,
        SolverKind::Heun => 2 * main_steps,
    };
    let per_leg = |n: usize| match restart_solver {
        SolverKind::Euler => n - 1,
        SolverKind::Heun => 2 * (n - 1),
    };
    main + config
        .levels
        .iter()
        .map(|l| l.k_iterations * per_leg(l.n_restart_steps))
        .sum::<usize>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table_config(k: usize) -> RestartConfig {
        RestartConfig::new(18, 0.002, 80.0, vec![RestartLevel::new(3, k, 0.06, 0.30)])
    }

    #[test]
    fn edm_grid_hits_reported_steps() {
        let g = edm_time_grid(0.002, 80.0, 18, 7.0).unwrap();
        assert_eq!(g.len(), 18);
        assert_relative_eq!(g.times()[12], 0.30, max_relative = 0.05);
        assert_relative_eq!(g.times()[14], 0.06, max_relative = 0.05);
        assert_eq!(g.first(), 80.0);
        assert_eq!(g.last(), 0.002);
    }

    #[test]
    fn edm_grid_small_cases() {
        assert_eq!(edm_time_grid(1.0, 4.0, 2, 7.0).unwrap().times(), &[4.0, 1.0]);
        let lin = edm_time_grid(1.0, 4.0, 3, 1.0).unwrap();
        assert_eq!(lin.times(), &[4.0, 2.5, 1.0]);
    }

    #[test]
    fn edm_grid_rejects_bad_input() {
        assert!(edm_time_grid(4.0, 1.0, 5, 7.0).is_err());
        assert!(edm_time_grid(1.0, 1.0, 5, 7.0).is_err());
        assert!(edm_time_grid(0.1, 1.0, 1, 7.0).is_err());
        assert!(edm_time_grid(0.1, 1.0, 4, 0.0).is_err());
        assert!(edm_time_grid(-0.1, 1.0, 4, 7.0).is_err());
    }

    #[test]
    fn zero_only_at_the_end() {
        let g = edm_time_grid(0.0, 1.0, 5, 7.0).unwrap();
        assert_eq!(g.last(), 0.0);
        assert!(g.with_terminal_zero().is_err());
        assert!(TimeGrid::new(vec![1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn nfe_matches_reported_configs() {
        for (k, nfe) in [(10, 75), (2, 43), (20, 115), (5, 55), (0, 35)] {
            assert_eq!(nfe_count(&table_config(k), SolverKind::Heun, SolverKind::Heun), nfe);
        }
    }

    #[test]
    fn nfe_euler_main_variant() {
        let cfg = table_config(10);
        assert_eq!(nfe_count(&cfg, SolverKind::Euler, SolverKind::Heun), 18 + 40);
        assert_eq!(nfe_count(&cfg, SolverKind::Euler, SolverKind::Euler), 18 + 20);
    }

    #[test]
    fn nfe_agrees_with_grid_walk() {
        let cfg = table_config(0);
        let grid = cfg.main_grid().unwrap();
        assert_eq!(grid.nfe(SolverKind::Heun), 35);
        let mut windowed = cfg.clone();
        windowed.terminal_zero = false;
        assert_eq!(
            nfe_count(&windowed, SolverKind::Heun, SolverKind::Heun),
            windowed.main_grid().unwrap().nfe(SolverKind::Heun)
        );
    }

    #[test]
    fn embedding_rounds_to_nearest() {
        let main = TimeGrid::new(vec![1.0, 0.3, 0.1, 0.06, 0.0]).unwrap();
        let mk = |t_min: f64| RestartConfig::new(2, 0.06, 1.0, vec![RestartLevel::new(3, 1, t_min, 0.5)]);
        let exact = embed_restart_intervals(&main, &mk(0.06)).unwrap();
        assert_eq!(exact.levels[0].t_min, 0.06);
        let near = embed_restart_intervals(&main, &mk(0.07)).unwrap();
        assert_eq!(near.levels[0].t_min, 0.06);
        // Exact midpoint of 0.1 and 0.3 (both representable distances equal).
        let main = TimeGrid::new(vec![1.0, 0.75, 0.25, 0.0]).unwrap();
        let tie = embed_restart_intervals(&main, &RestartConfig::new(2, 0.25, 1.0, vec![RestartLevel::new(3, 1, 0.5, 0.9)]))
            .unwrap();
        assert_eq!(tie.levels[0].t_min, 0.75);
    }

    #[test]
    fn embedding_detects_overlap_after_rounding() {
        let main = TimeGrid::new(vec![2.0, 1.0, 0.5, 0.2, 0.0]).unwrap();
        let cfg = RestartConfig::new(
            2,
            0.2,
            2.0,
            vec![RestartLevel::new(3, 1, 0.7, 1.5), RestartLevel::new(3, 1, 0.3, 0.6)],
        );
        // 0.7 -> 0.5, and the second level's t_max 0.6 now exceeds it.
        assert!(embed_restart_intervals(&main, &cfg).is_err());
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let main = TimeGrid::new(vec![2.0, 1.0, 0.5]).unwrap();
        let cfg = RestartConfig::new(2, 0.5, 2.0, vec![RestartLevel::new(3, 1, 0.1, 0.4)]);
        assert!(embed_restart_intervals(&main, &cfg).is_err());
    }

    #[test]
    fn level_invariants() {
        assert!(RestartLevel::new(1, 1, 0.1, 0.2).validate().is_err());
        assert!(RestartLevel::new(3, 1, 0.2, 0.2).validate().is_err());
        let mut l = RestartLevel::new(3, 1, 0.06, 0.30);
        l.s_noise = 0.9;
        assert!(l.validate().is_err());
        assert_relative_eq!(RestartLevel::new(3, 1, 0.06, 0.30).forward_variance(), 0.0864, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn edm_grid_strictly_decreasing(t_min in 0.0f64..1.0, span in 1e-3f64..100.0, n in 2usize..200, rho in 0.5f64..10.0) {
            let g = edm_time_grid(t_min, t_min + span, n, rho).unwrap();
            prop_assert!(g.times().windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn rho_one_is_linear(t_min in 0.0f64..1.0, span in 1e-2f64..10.0, n in 2usize..64) {
            let g = edm_time_grid(t_min, t_min + span, n, 1.0).unwrap();
            for (i, t) in g.times().iter().enumerate() {
                let lin = (t_min + span) + (i as f64 / (n - 1) as f64) * (t_min - (t_min + span));
                prop_assert!((t - lin).abs() <= 4.0 * f64::EPSILON * (t_min + span));
            }
        }

        #[test]
        fn embedding_is_idempotent(n in 4usize..40, frac in 0.05f64..0.9) {
            let main = edm_time_grid(0.002, 80.0, n, 7.0).unwrap().with_terminal_zero().unwrap();
            let t_min = 0.002 + frac * 10.0;
            let cfg = RestartConfig::new(n, 0.002, 80.0, vec![RestartLevel::new(3, 2, t_min, 80.0)]);
            if let Ok(once) = embed_restart_intervals(&main, &cfg) {
                let twice = embed_restart_intervals(&main, &once).unwrap();
                prop_assert_eq!(once, twice);
            }
        }
    }
}
