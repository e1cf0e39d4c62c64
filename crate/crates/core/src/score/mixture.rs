use crate::error::{Error, Result};

use super::{check_time, softmax_in_place, ScoreField};

/// Isotropic Gaussian mixture `Σ_k w_k N(μ_k, s_k² I)`.
///
/// Convolving with `N(0, t² I)` keeps it a mixture with variances
/// `s_k² + t²`, so the score of `p_t` is available in closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || stds.len() != k {
            return Err(Error::config("mixture needs matching, non-empty weights/means/stds"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::config("mixture means have inconsistent dimensions"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::config("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("mixture weights sum to {total}, not 1")));
        }
        if stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::config("component stds must be positive"));
        }
        if means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::config("mixture means must be finite"));
        }
        Ok(Self {
            weights,
            means,
            stds,
            dim,
        })
    }

    /// Single component `N(mean, std² I)`.
    pub fn single(mean: Vec<f64>, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    /// Posterior component responsibilities `r_k(x)` under `p_t`.
    fn responsibilities(&self, x: &[f64], t: f64) -> Vec<f64> {
        let half_d = 0.5 * self.dim as f64;
        let mut logits: Vec<f64> = self
            .means
            .iter()
            .zip(&self.weights)
            .zip(&self.stds)
            .map(|((mu, w), s)| {
                let var = s * s + t * t;
                let sq: f64 = x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() - half_d * var.ln() - sq / (2.0 * var)
            })
            .collect();
        softmax_in_place(&mut logits);
        logits
    }
}

impl ScoreField for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_time(t)?;
        let resp = self.responsibilities(x, t);
        out.fill(0.0);
        for ((r, mu), s) in resp.iter().zip(&self.means).zip(&self.stds) {
            let coef = r / (s * s + t * t);
            for ((o, m), xi) in out.iter_mut().zip(mu).zip(x) {
                *o += coef * (m - xi);
            }
        }
        Ok(())
    }
}
