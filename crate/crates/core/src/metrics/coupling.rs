use rand::Rng;

use crate::rng;

/// One coupled forward-noise step of two chains.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingOutcome {
    pub x_next: Vec<f64>,
    pub y_next: Vec<f64>,
    /// True iff `x_next == y_next`.
    pub collided: bool,
}

/// Draw `x + ξ_x` and `y + ξ_y` with `ξ_x, ξ_y ~ N(0, σ²I)` under a maximal
/// coupling.
///
/// The noise component orthogonal to `x − y` is shared. Along `e = (x−y)/‖x−y‖`
/// with separation `s = ‖x−y‖/σ`, the `x` coordinate is `z ~ N(0,1)`; the `y`
/// coordinate is `z + s` (landing on `x_next`) with probability
/// `min(1, φ(z+s)/φ(z))`, and the reflection `−z` otherwise. The collision
/// probability is `2·Q(s/2)`, the largest possible.
pub fn maximal_coupling_step<R: Rng + ?Sized>(x: &[f64], y: &[f64], sigma: f64, rng: &mut R) -> CouplingOutcome {
    assert_eq!(x.len(), y.len(), "coupled points must have equal dimension");
    assert!(sigma > 0.0, "noise std must be positive");
    let mut xi = vec![0.0; x.len()];
    rng::fill_normal(rng, &mut xi);
    let x_next: Vec<f64> = x.iter().zip(&xi).map(|(a, n)| a + sigma * n).collect();
    let u: f64 = rng.random();

    let dist = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    if dist == 0.0 {
        return CouplingOutcome {
            y_next: x_next.clone(),
            x_next,
            collided: true,
        };
    }
    let s = dist / sigma;
    let e: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b) / dist).collect();
    let z: f64 = xi.iter().zip(&e).map(|(n, ei)| n * ei).sum();
    // log φ(z+s) − log φ(z)
    let log_ratio = -s * z - 0.5 * s * s;
    if log_ratio >= 0.0 || u.ln() < log_ratio {
        return CouplingOutcome {
            y_next: x_next.clone(),
            x_next,
            collided: true,
        };
    }
    // reflect the parallel component: ξ_y = ξ − 2z·e
    let y_next = y
        .iter()
        .zip(&xi)
        .zip(&e)
        .map(|((b, n), ei)| b + sigma * (n - 2.0 * z * ei))
        .collect();
    CouplingOutcome {
        x_next,
        y_next,
        collided: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::gaussian_tail_q;
    use crate::rng::Stage;

    fn collision_rate(r: f64, trials: usize, seed: u64) -> f64 {
        let mut rng = rng::stream(seed, Stage::Coupling, 0);
        let x = [0.0, 0.0, 0.0];
        let y = [2.0 * r * 0.6, 2.0 * r * 0.8, 0.0];
        (0..trials)
            .filter(|_| maximal_coupling_step(&x, &y, 1.0, &mut rng).collided)
            .count() as f64
            / trials as f64
    }

    #[test]
    fn identical_points_always_collide() {
        let mut rng = rng::stream(1, Stage::Coupling, 0);
        for _ in 0..100 {
            let out = maximal_coupling_step(&[1.0, 2.0], &[1.0, 2.0], 0.5, &mut rng);
            assert!(out.collided);
            assert_eq!(out.x_next, out.y_next);
        }
    }

    #[test]
    fn collision_rate_matches_overlap() {
        let n = 100_000;
        let p = 2.0 * gaussian_tail_q(1.0);
        let rate = collision_rate(1.0, n, 2);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((rate - p).abs() < 3.0 * se, "{rate} vs {p}");
    }

    #[test]
    fn collision_rate_decreases_with_separation() {
        let rates: Vec<f64> = [0.25, 0.75, 1.5].iter().map(|&r| collision_rate(r, 20_000, 3)).collect();
        assert!(rates[0] > rates[1] && rates[1] > rates[2], "{rates:?}");
    }

    #[test]
    fn marginals_are_gaussian() {
        let n = 50_000;
        let sigma = 0.7;
        let x = [0.3, -1.0];
        let y = [1.1, 0.4];
        let mut rng = rng::stream(4, Stage::Coupling, 0);
        let mut sums = [[0.0; 2]; 4];
        for _ in 0..n {
            let out = maximal_coupling_step(&x, &y, sigma, &mut rng);
            for k in 0..2 {
                let dx = out.x_next[k] - x[k];
                let dy = out.y_next[k] - y[k];
                sums[0][k] += dx;
                sums[1][k] += dx * dx;
                sums[2][k] += dy;
                sums[3][k] += dy * dy;
            }
        }
        let var = sigma * sigma;
        let mean_se = (var / n as f64).sqrt();
        let var_se = var * (2.0 / n as f64).sqrt();
        for k in 0..2 {
            for (m, v) in [(sums[0][k], sums[1][k]), (sums[2][k], sums[3][k])] {
                let mean = m / n as f64;
                assert!(mean.abs() < 3.0 * mean_se, "mean {mean}");
                let v = v / n as f64 - mean * mean;
                assert!((v - var).abs() < 3.0 * var_se, "var {v}");
            }
        }
    }
}
