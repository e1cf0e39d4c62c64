use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::{self, Stage};
use crate::score::EmpiricalDataset;

/// Two-component Gaussian mixture in a low-dimensional base space, linearly
/// embedded into a higher-dimensional ambient space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub base_dim: usize,
    pub ambient_dim: usize,
    pub count: usize,
    /// Weight of the `+a` component; `−a` gets the rest.
    pub weight_pos: f64,
    /// The center `a`, length `base_dim`.
    pub center: Vec<f64>,
    pub component_std: f64,
    /// Seed of the projection matrix; derived from the dataset seed when unset.
    pub projection_seed: Option<u64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            base_dim: 4,
            ambient_dim: 20,
            count: 2000,
            weight_pos: 0.3,
            center: vec![3.0; 4],
            component_std: 1.0,
            projection_seed: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_dim == 0 || self.ambient_dim == 0 || self.count < 2 {
            return Err(Error::config("dataset needs positive dimensions and at least 2 points"));
        }
        if self.center.len() != self.base_dim {
            return Err(Error::config(format!(
                "center has {} entries, base_dim is {}",
                self.center.len(),
                self.base_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.weight_pos) {
            return Err(Error::config("weight_pos must lie in [0, 1]"));
        }
        if !(self.component_std >= 0.0 && self.component_std.is_finite()) {
            return Err(Error::config("component_std must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Sample the mixture, project with a standard-normal matrix `P`
/// (`ambient_dim × base_dim`) and scale every ambient coordinate to unit
/// empirical variance.
pub fn build_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<EmpiricalDataset> {
    spec.validate()?;
    let (k, d, n) = (spec.base_dim, spec.ambient_dim, spec.count);

    let mut proj_rng = match spec.projection_seed {
        Some(s) => rng::stream(s, Stage::Dataset, 1),
        None => rng::stream(seed, Stage::Dataset, 1),
    };
    let mut proj = vec![0.0; d * k];
    rng::fill_normal(&mut proj_rng, &mut proj);

    let mut rng = rng::stream(seed, Stage::Dataset, 0);
    let mut base = vec![0.0; k];
    let mut data = vec![0.0; n * d];
    for row in data.chunks_exact_mut(d) {
        let sign = if rng.random::<f64>() < spec.weight_pos { 1.0 } else { -1.0 };
        rng::fill_normal(&mut rng, &mut base);
        for (b, c) in base.iter_mut().zip(&spec.center) {
            *b = sign * c + spec.component_std * *b;
        }
        for (j, out) in row.iter_mut().enumerate() {
            *out = proj[j * k..(j + 1) * k].iter().zip(&base).map(|(p, b)| p * b).sum();
        }
    }

    for j in 0..d {
        let mean = data.iter().skip(j).step_by(d).sum::<f64>() / n as f64;
        let var = data.iter().skip(j).step_by(d).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        if var > 0.0 {
            let scale = var.sqrt().recip();
            data.iter_mut().skip(j).step_by(d).for_each(|v| *v *= scale);
        }
    }
    EmpiricalDataset::new(Points::from_vec(data, d)?)
}

/// `n` exact draws from `p_t` of the empirical distribution: a uniformly
/// chosen data point plus `t·N(0, I)`.
pub fn sample_true_at<R: Rng + ?Sized>(ds: &EmpiricalDataset, t: f64, n: usize, rng: &mut R) -> Result<Points> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("noise level must be finite and >= 0, got {t}")));
    }
    let src = ds.points();
    let d = src.dim();
    let mut out = Points::zeros(n, d);
    let mut noise = vec![0.0; d];
    for row in out.as_mut_slice().chunks_exact_mut(d) {
        let idx = rng.random_range(0..src.len());
        rng::fill_normal(rng, &mut noise);
        for ((o, x), z) in row.iter_mut().zip(src.row(idx)).zip(&noise) {
            *o = x + t * z;
        }
    }
    Ok(out)
}
