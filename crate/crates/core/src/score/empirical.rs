use crate::error::{Error, Result};
use crate::points::Points;

use super::{check_time, ScoreField};

/// A finite dataset; its noised distribution `(1/N) Σ_i N(x_i, t² I)` has an
/// exact score, which is the ground-truth field for the synthetic experiments.
///
/// Data confined to an `r < d` dimensional linear subspace is stored in an
/// orthonormal basis of that subspace as well: the component of `x`
/// orthogonal to it shifts every logit equally, so the softmax weights and
/// the weighted mean only need `r`-dimensional arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDataset {
    points: Points,
    reduced: Option<Subspace>,
}

#[derive(Debug, Clone, PartialEq)]
struct Subspace {
    /// `r × d`, orthonormal rows.
    basis: Vec<f64>,
    /// `n × r` coordinates of the data in `basis`.
    coords: Vec<f64>,
    rank: usize,
}

impl Subspace {
    /// Gram–Schmidt (with re-orthogonalisation) over the data rows.
    fn detect(points: &Points) -> Option<Self> {
        let d = points.dim();
        let scale = points.rows().map(|p| dot(p, p)).fold(0.0, f64::max).sqrt();
        if scale == 0.0 {
            return None;
        }
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for p in points.rows() {
            let mut v = p.to_vec();
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm > 1e-9 * scale {
                v.iter_mut().for_each(|vi| *vi /= norm);
                basis.push(v);
                if basis.len() == d {
                    return None;
                }
            }
        }
        let rank = basis.len();
        let mut coords = Vec::with_capacity(points.len() * rank);
        for p in points.rows() {
            let z: Vec<f64> = basis.iter().map(|q| dot(q, p)).collect();
            // the subspace must reproduce every point to rounding accuracy
            let err2: f64 = (0..d)
                .map(|j| {
                    let r = p[j] - basis.iter().zip(&z).map(|(q, zk)| q[j] * zk).sum::<f64>();
                    r * r
                })
                .sum();
            if err2.sqrt() > 1e-9 * scale {
                return None;
            }
            coords.extend(z);
        }
        Some(Self {
            basis: basis.concat(),
            coords,
            rank,
        })
    }
}

impl EmpiricalDataset {
    pub fn new(points: Points) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::config("dataset must contain at least one point"));
        }
        if !points.is_finite() {
            return Err(Error::config("dataset entries must be finite"));
        }
        let reduced = Subspace::detect(&points);
        Ok(Self { points, reduced })
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Dimension of the linear span of the data when it is lower than the
    /// ambient dimension.
    pub fn reduced_rank(&self) -> Option<usize> {
        self.reduced.as_ref().map(|s| s.rank)
    }
}

/// Softmax weights (unnormalised, max weight 1) over `rows` of width `w` for
/// logits `−‖row − y‖²/(2t²)`; returns the weighted row sum and the weight total.
fn weighted_mean(rows: &[f64], w: usize, y: &[f64], t: f64, acc: &mut [f64]) -> f64 {
    let inv = 1.0 / (2.0 * t * t);
    let mut logits: Vec<f64> = rows.chunks_exact(w).map(|p| -inv * squared_distance(p, y)).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for l in logits.iter_mut() {
        // below e^-50 a weight cannot move the normalised sum
        *l = if *l - max < -LOGIT_CUTOFF { 0.0 } else { (*l - max).exp() };
        total += *l;
    }
    acc.fill(0.0);
    for (wt, p) in logits.iter().zip(rows.chunks_exact(w)) {
        if *wt == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(p) {
            *a += wt * v;
        }
    }
    total
}

impl ScoreField for EmpiricalDataset {
    fn dim(&self) -> usize {
        self.points.dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_time(t)?;
        let d = self.points.dim();
        match &self.reduced {
            None => {
                let total = weighted_mean(self.points.as_slice(), d, x, t, out);
                out.iter_mut().for_each(|o| *o /= total);
            }
            Some(sub) => {
                let r = sub.rank;
                let y: Vec<f64> = sub.basis.chunks_exact(d).map(|q| dot(q, x)).collect();
                let mut mean = vec![0.0; r];
                let total = weighted_mean(&sub.coords, r, &y, t, &mut mean);
                out.fill(0.0);
                for (q, m) in sub.basis.chunks_exact(d).zip(&mean) {
                    let c = m / total;
                    out.iter_mut().zip(q).for_each(|(o, qj)| *o += c * qj);
                }
            }
        }
        let inv_t2 = 1.0 / (t * t);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = (*o - xi) * inv_t2;
        }
        Ok(())
    }
}

const LOGIT_CUTOFF: f64 = 50.0;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `‖a − b‖²` with four independent accumulators so the loop vectorises.
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| (x - y) * (x - y)).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
