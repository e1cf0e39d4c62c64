use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stage};

use super::ScoreField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    /// `base + (ε/t)·u` for one seeded unit vector `u`.
    FixedDirection,
    /// `base + (ε/t)·v(x)` with `v_k(x) = sin(ω_k·x + φ_k)/√d`, so `‖v‖ ≤ 1`.
    SmoothField,
}

/// Recipe for a score with a prescribed error `‖t·(f − base)‖ ≤ ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub mode: PerturbationMode,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn fixed(epsilon: f64, seed: u64) -> Self {
        Self {
            epsilon,
            mode: PerturbationMode::FixedDirection,
            seed,
        }
    }
}

/// Angular frequency scale of the smooth perturbation field.
const SMOOTH_FREQUENCY: f64 = 0.25;

#[derive(Debug, Clone)]
enum Direction {
    Fixed(Vec<f64>),
    Smooth { freqs: Vec<f64>, phases: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct PerturbedScore<S> {
    base: S,
    epsilon: f64,
    direction: Direction,
}

pub fn perturbed_score<S: ScoreField>(base: S, spec: PerturbationSpec) -> Result<PerturbedScore<S>> {
    PerturbedScore::new(base, spec)
}

impl<S: ScoreField> PerturbedScore<S> {
    pub fn new(base: S, spec: PerturbationSpec) -> Result<Self> {
        if !(spec.epsilon >= 0.0 && spec.epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be >= 0, got {}", spec.epsilon)));
        }
        let d = base.dim();
        let mut rng = rng::stream(spec.seed, Stage::Perturbation, 0);
        let direction = match spec.mode {
            PerturbationMode::FixedDirection => {
                let mut u = vec![0.0; d];
                loop {
                    rng::fill_normal(&mut rng, &mut u);
                    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-8 {
                        u.iter_mut().for_each(|v| *v /= norm);
                        break;
                    }
                }
                Direction::Fixed(u)
            }
            PerturbationMode::SmoothField => {
                let mut freqs = vec![0.0; d * d];
                rng::fill_normal(&mut rng, &mut freqs);
                freqs.iter_mut().for_each(|w| *w *= SMOOTH_FREQUENCY);
                let phases = (0..d)
                    .map(|_| std::f64::consts::TAU * rand::Rng::random::<f64>(&mut rng))
                    .collect();
                Direction::Smooth { freqs, phases }
            }
        };
        Ok(Self {
            base,
            epsilon: spec.epsilon,
            direction,
        })
    }

    pub fn base(&self) -> &S {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl<S: ScoreField> ScoreField for PerturbedScore<S> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.base.eval_into(x, t, out)?;
        if self.epsilon == 0.0 {
            return Ok(());
        }
        let scale = self.epsilon / t;
        match &self.direction {
            Direction::Fixed(u) => {
                for (o, ui) in out.iter_mut().zip(u) {
                    *o += scale * ui;
                }
            }
            Direction::Smooth { freqs, phases } => {
                let d = x.len();
                let norm = 1.0 / (d as f64).sqrt();
                for (k, o) in out.iter_mut().enumerate() {
                    let w = &freqs[k * d..(k + 1) * d];
                    let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + phases[k];
                    *o += scale * norm * arg.sin();
                }
            }
        }
        Ok(())
    }
}
