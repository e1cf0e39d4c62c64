use rand::seq::index;

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::points::Points;
use crate::rng::{self, Stage};

/// Minimum-cost perfect assignment of an `n × n` row-major cost matrix.
///
/// Shortest augmenting paths with dual potentials (Hungarian /
/// Jonker–Volgenant), `O(n³)`. Returns `col[i]`, the column matched to row `i`.
pub fn assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n × n");
    // 1-based with a virtual column 0, following the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col = vec![0; n];
    for j in 1..=n {
        col[row_of[j] - 1] = j - 1;
    }
    col
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_pair(a: &Points, b: &Points) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::config(format!(
            "W1 needs two non-empty sets of equal size, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::config(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Exact empirical Wasserstein-1 distance between two equally weighted sets:
/// `(1/n)·min_π Σ_i ‖a_i − b_π(i)‖`.
///
/// The cost matrix is filled with `exec`; the assignment itself is
/// sequential, so the result never depends on the execution mode. In one
/// dimension the sorted (monotone) coupling is optimal and no matrix is built.
pub fn w1_assignment(a: &Points, b: &Points, exec: Execution) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    if a.dim() == 1 {
        return Ok(monotone_w1(a.as_slice(), b.as_slice()) / n as f64);
    }
    let rows = par::map_indexed(n, exec, |i| {
        let ai = a.row(i);
        b.rows().map(|bj| euclidean(ai, bj)).collect::<Vec<_>>()
    });
    let cost = rows.concat();
    let col = assignment(&cost, n);
    let total: f64 = col.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / n as f64)
}

fn monotone_w1(a: &[f64], b: &[f64]) -> f64 {
    let order = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
        idx
    };
    let (ia, ib) = (order(a), order(b));
    let mut col = vec![0; a.len()];
    for (&i, &j) in ia.iter().zip(&ib) {
        col[i] = j;
    }
    // row order, like the general path
    col.iter()
        .enumerate()
        .map(|(i, &j)| euclidean(&a[i..=i], &b[j..=j]))
        .sum()
}

/// [`w1_assignment`] on `n_sub` rows drawn without replacement from each set.
///
/// The two index subsets are independent draws from
/// `rng::stream(seed, Stage::Subsample, {0, 1})`. With `n_sub ≥ n` this is
/// the exact distance. Sub-sampling biases W1 upward by roughly
/// `O(n_sub^{-1/d})`; compare values only at equal `n_sub`.
pub fn w1_subsampled(a: &Points, b: &Points, n_sub: usize, seed: u64, exec: Execution) -> Result<f64> {
    check_pair(a, b)?;
    if n_sub == 0 {
        return Err(Error::config("sub-sample size must be positive"));
    }
    if n_sub >= a.len() {
        return w1_assignment(a, b, exec);
    }
    let pick = |p: &Points, stream: u64| {
        let mut rng = rng::stream(seed, Stage::Subsample, stream);
        let mut idx = index::sample(&mut rng, p.len(), n_sub).into_vec();
        idx.sort_unstable();
        let rows: Vec<f64> = idx.iter().flat_map(|&i| p.row(i).iter().copied()).collect();
        Points::from_vec(rows, p.dim())
    };
    w1_assignment(&pick(a, 0)?, &pick(b, 1)?, exec)
}
