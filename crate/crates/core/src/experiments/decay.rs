use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{contraction_factor_lambda, maximal_coupling_step, w1_assignment};
use crate::par::Execution;
use crate::points::Points;
use crate::rng::{self, Stage};
use crate::samplers::{run_batch, SamplerSpec};
use crate::schedule::{edm_time_grid, SolverKind, EDM_RHO};
use crate::score::{EmpiricalDataset, ScoreField};

use super::dataset::sample_true_at;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayConfig {
    pub t_min: f64,
    pub t_max: f64,
    /// Grid points of each backward leg.
    pub n_restart: usize,
    pub solver: SolverKind,
    pub k_max: usize,
    pub n_pairs: usize,
    /// The second population starts as the first shifted by this amount in
    /// every coordinate; 0 gives identical starts.
    pub init_offset: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            t_min: 1.0,
            t_max: 1.5,
            n_restart: 8,
            solver: SolverKind::Heun,
            k_max: 10,
            n_pairs: 2000,
            init_offset: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub k: usize,
    /// Fraction of chain pairs not yet merged after `k` iterations.
    pub non_collided: f64,
    pub w1: f64,
    /// `(1 − λ̂)^k`.
    pub bound: f64,
    /// Binomial standard error of a fraction equal to `bound`.
    pub bound_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayStudy {
    /// Largest distance between any two states (both populations, all
    /// iterations) where noise is injected.
    pub b_measured: f64,
    pub lambda_hat: f64,
    pub curve: Vec<DecayPoint>,
}

fn diameter(a: &Points, b: &Points) -> f64 {
    let all: Vec<&[f64]> = a.rows().chain(b.rows()).collect();
    let mut best = 0.0f64;
    for (i, p) in all.iter().enumerate() {
        for q in &all[i + 1..] {
            let d2: f64 = p.iter().zip(q.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.max(d2);
        }
    }
    best.sqrt()
}

/// Pairs of Restart chains on `[t_min, t_max]` whose forward noise is drawn
/// from the maximal coupling; merged pairs share noise and stay merged.
///
/// The first population starts from `p_{t_min}`, the second from the same
/// points shifted by `init_offset`. Pair `i` draws coupling noise from
/// `rng::stream(seed, Stage::Coupling, i)`.
pub fn contraction_decay_study<F: ScoreField + ?Sized>(
    ds: &EmpiricalDataset,
    score: &F,
    config: &DecayConfig,
    seed: u64,
) -> Result<DecayStudy> {
    let d = ds.points().dim();
    if d > 2 {
        return Err(Error::config(format!("decay study needs dimension <= 2, got {d}")));
    }
    if config.n_pairs == 0 {
        return Err(Error::config("n_pairs must be positive"));
    }
    let sigma = (config.t_max * config.t_max - config.t_min * config.t_min).sqrt();
    let spec = SamplerSpec::Ode {
        grid: edm_time_grid(config.t_min, config.t_max, config.n_restart, EDM_RHO)?,
        solver: config.solver,
    };
    let mut x = sample_true_at(ds, config.t_min, config.n_pairs, &mut rng::stream(seed, Stage::TrueDraw, 0))?;
    let mut y = x.clone();
    y.as_mut_slice().iter_mut().for_each(|v| *v += config.init_offset);
    let mut rngs: Vec<_> = (0..config.n_pairs)
        .map(|i| rng::stream(seed, Stage::Coupling, i as u64))
        .collect();

    let mut states = Vec::with_capacity(config.k_max + 1);
    let mut b = 0.0f64;
    for k in 0..=config.k_max {
        b = b.max(diameter(&x, &y));
        let merged = x.rows().zip(y.rows()).filter(|(a, c)| a == c).count();
        let w1 = w1_assignment(&x, &y, Execution::Sequential)?;
        states.push((k, 1.0 - merged as f64 / config.n_pairs as f64, w1));
        if k == config.k_max {
            break;
        }
        for (i, r) in rngs.iter_mut().enumerate() {
            let out = maximal_coupling_step(x.row(i), y.row(i), sigma, r);
            x.row_mut(i).copy_from_slice(&out.x_next);
            y.row_mut(i).copy_from_slice(&out.y_next);
        }
        x = run_batch(score, &x, &spec, 0, Execution::Sequential)?.points;
        y = run_batch(score, &y, &spec, 0, Execution::Sequential)?.points;
    }

    let lambda_hat = contraction_factor_lambda(b, config.t_min, config.t_max)?;
    let curve = states
        .into_iter()
        .map(|(k, non_collided, w1)| {
            let bound = (1.0 - lambda_hat).powi(k as i32);
            DecayPoint {
                k,
                non_collided,
                w1,
                bound,
                bound_se: (bound * (1.0 - bound) / config.n_pairs as f64).sqrt(),
            }
        })
        .collect();
    Ok(DecayStudy {
        b_measured: b,
        lambda_hat,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data() -> EmpiricalDataset {
        let pts: Vec<f64> = (0..20).map(|i| -1.0 + 0.1 * i as f64).collect();
        EmpiricalDataset::new(Points::from_vec(pts, 1).unwrap()).unwrap()
    }

    #[test]
    fn identical_starts_are_merged() {
        let ds = line_data();
        let cfg = DecayConfig {
            init_offset: 0.0,
            n_pairs: 50,
            k_max: 2,
            ..DecayConfig::default()
        };
        let study = contraction_decay_study(&ds, &ds, &cfg, 1).unwrap();
        assert!(study.curve.iter().all(|p| p.non_collided == 0.0 && p.w1 == 0.0));
    }

    #[test]
    fn non_collided_fraction_is_non_increasing() {
        let ds = line_data();
        let cfg = DecayConfig {
            n_pairs: 300,
            k_max: 6,
            ..DecayConfig::default()
        };
        let study = contraction_decay_study(&ds, &ds, &cfg, 2).unwrap();
        assert_eq!(study.curve[0].non_collided, 1.0);
        for w in study.curve.windows(2) {
            assert!(w[1].non_collided <= w[0].non_collided);
        }
        assert!(study.curve.last().unwrap().non_collided < 0.5);
    }

    #[test]
    fn rejects_high_dimension() {
        let ds = EmpiricalDataset::new(Points::zeros(4, 3)).unwrap();
        assert!(contraction_decay_study(&ds, &ds, &DecayConfig::default(), 0).is_err());
    }
}
