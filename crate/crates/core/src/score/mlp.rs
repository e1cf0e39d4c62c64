//! A small fully connected score network trained by denoising score matching.
//!
//! The network sees `[x, ln t]` and produces `g(x, t) ∈ R^d`; the score is
//! `g / t`. With that output scaling the t²-weighted denoising objective
//!
//! ```text
//! E_{x0, t, ε} t² ‖s(x0 + tε, t) + ε/t‖²  =  E ‖g(x0 + tε, t) + ε‖²
//! ```
//!
//! has an O(1) regression target at every noise level.
//!
//! # File format
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        8 bytes   b"RSTMLP01"
//! dim          u32       data dimension d
//! n_layers     u32       L
//! shapes       L × (u32 outputs, u32 inputs)
//! parameters   for each layer: outputs×inputs f64 weights (row-major),
//!              then outputs f64 biases
//! ```
//!
//! Hidden layers use SiLU; the last layer is linear.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stage};

use super::{check_time, EmpiricalDataset, ScoreField};

const MAGIC: &[u8; 8] = b"RSTMLP01";

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, input: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weights.chunks_exact(self.inputs).zip(&self.bias))
        {
            *o = b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Multilayer perceptron score `s(x, t) = g([x, ln t]) / t`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreNet {
    dim: usize,
    layers: Vec<Dense>,
}

/// One denoising example: the network is queried at `x0 + t·noise`.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub x0: Vec<f64>,
    pub t: f64,
    pub noise: Vec<f64>,
}

/// Per-layer values kept for backpropagation.
struct Trace {
    /// Layer inputs (index 0 is the feature vector).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
}

impl MlpScoreNet {
    /// Four dense layers `(d+1) → width → width → width → d`.
    pub fn new(dim: usize, width: usize, seed: u64) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::config("network dimension and width must be positive"));
        }
        let mut rng = rng::stream(seed, Stage::Init, 0);
        let sizes = [dim + 1, width, width, width, dim];
        let layers = sizes
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], &mut rng))
            .collect();
        Ok(Self { dim, layers })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.outputs, l.inputs)).collect()
    }

    /// Parameters flattened layer by layer: weights (row-major) then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::config(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    fn features(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.dim + 1);
        f.extend_from_slice(x);
        f.push(t.ln());
        f
    }

    fn forward_trace(&self, x: &[f64], t: f64) -> (Vec<f64>, Trace) {
        let mut inputs = vec![self.features(x, t)];
        let mut pre = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            layer.forward(&inputs[i], &mut z);
            if i < last {
                inputs.push(z.iter().map(|v| silu(*v)).collect());
            }
            pre.push(z);
        }
        let out = pre[last].clone();
        (out, Trace { inputs, pre })
    }

    /// Raw network output `g(x, t)`.
    pub fn raw_output(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.forward_trace(x, t).0
    }

    /// `∂s/∂x` as a row-major `d × d` matrix (`J[i][j] = ∂s_i/∂x_j`).
    pub fn input_jacobian(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        let (_, trace) = self.forward_trace(x, t);
        let d = self.dim;
        // M holds ∂(layer output)/∂x, shape outputs × d.
        let first = &self.layers[0];
        let mut m: Vec<f64> = first
            .weights
            .chunks_exact(first.inputs)
            .flat_map(|row| row[..d].to_vec())
            .collect();
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            let rows = self.layers[i - 1].outputs;
            for (r, z) in trace.pre[i - 1].iter().enumerate() {
                let g = silu_grad(*z);
                m[r * d..(r + 1) * d].iter_mut().for_each(|v| *v *= g);
            }
            let mut next = vec![0.0; layer.outputs * d];
            for o in 0..layer.outputs {
                let wrow = &layer.weights[o * rows..(o + 1) * rows];
                let dst = &mut next[o * d..(o + 1) * d];
                for (k, w) in wrow.iter().enumerate() {
                    for (dv, mv) in dst.iter_mut().zip(&m[k * d..(k + 1) * d]) {
                        *dv += w * mv;
                    }
                }
            }
            m = next;
        }
        m.iter_mut().for_each(|v| *v /= t);
        Ok(m)
    }

    /// Mean denoising loss over `batch` and its gradient w.r.t. [`Self::params`].
    pub fn loss_and_grad(&self, batch: &[TrainingSample]) -> (f64, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut loss = 0.0;
        let scale = 1.0 / batch.len().max(1) as f64;
        for sample in batch {
            let x: Vec<f64> = sample
                .x0
                .iter()
                .zip(&sample.noise)
                .map(|(a, n)| a + sample.t * n)
                .collect();
            let (out, trace) = self.forward_trace(&x, sample.t);
            let resid: Vec<f64> = out.iter().zip(&sample.noise).map(|(g, n)| g + n).collect();
            loss += resid.iter().map(|r| r * r).sum::<f64>();
            let mut delta: Vec<f64> = resid.iter().map(|r| 2.0 * r * scale).collect();
            for (i, layer) in self.layers.iter().enumerate().rev() {
                let input = &trace.inputs[i];
                let (gw, gb) = &mut grads[i];
                for (o, dlt) in delta.iter().enumerate() {
                    gb[o] += dlt;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += dlt * a;
                    }
                }
                if i == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, dlt) in delta.iter().enumerate() {
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += dlt * w;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&trace.pre[i - 1]) {
                    *p *= silu_grad(*z);
                }
                delta = prev;
            }
        }
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        (loss * scale, flat)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.layers.len() + 8 * self.n_params());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.outputs as u32).to_le_bytes());
            out.extend_from_slice(&(l.inputs as u32).to_le_bytes());
        }
        for v in self.params() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cursor = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cursor.len() < n {
                return Err("truncated network file".to_string());
            }
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head)
        };
        if take(8)? != MAGIC {
            return Err("bad magic header".to_string());
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;
        let dim = u32_at(take(4)?);
        let n_layers = u32_at(take(4)?);
        if dim == 0 || n_layers == 0 || n_layers > 64 {
            return Err(format!("implausible header: dim {dim}, {n_layers} layers"));
        }
        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let outputs = u32_at(take(4)?);
            let inputs = u32_at(take(4)?);
            shapes.push((outputs, inputs));
        }
        if shapes[0].1 != dim + 1 || shapes[n_layers - 1].0 != dim {
            return Err("layer shapes do not match the data dimension".to_string());
        }
        if shapes.windows(2).any(|w| w[0].0 != w[1].1) {
            return Err("consecutive layer shapes are inconsistent".to_string());
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (outputs, inputs) in shapes {
            let mut read_vec = |n: usize| -> std::result::Result<Vec<f64>, String> {
                let raw = take(8 * n)?;
                Ok(raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            let weights = read_vec(outputs * inputs)?;
            let bias = read_vec(outputs)?;
            layers.push(Dense {
                inputs,
                outputs,
                weights,
                bias,
            });
        }
        if !cursor.is_empty() {
            return Err(format!("{} trailing bytes", cursor.len()));
        }
        let net = Self { dim, layers };
        if net.params().iter().any(|v| !v.is_finite()) {
            return Err("non-finite parameters".to_string());
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Format {
            path: path.to_path_buf(),
            msg,
        })
    }
}

impl ScoreField for MlpScoreNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        check_time(t)?;
        let g = self.raw_output(x, t);
        for (o, v) in out.iter_mut().zip(g) {
            *o = v / t;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Noise levels are drawn log-uniformly on `[t_min, t_max]`.
    pub t_min: f64,
    pub t_max: f64,
    pub width: usize,
    /// Iterations per loss-log row.
    pub log_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            batch_size: 128,
            learning_rate: 1e-3,
            clip_norm: 10.0,
            t_min: 0.01,
            t_max: 5.0,
            width: 64,
            log_every: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: MlpScoreNet,
    /// `(iteration at end of interval, mean loss over the interval)`.
    pub loss_log: Vec<(usize, f64)>,
}

/// Plain SGD with gradient clipping on the denoising objective.
pub fn train_mlp_score(ds: &EmpiricalDataset, cfg: &TrainingConfig, seed: u64) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.log_every == 0 {
        return Err(Error::config("batch_size and log_every must be positive"));
    }
    if !(cfg.t_min > 0.0 && cfg.t_min < cfg.t_max) {
        return Err(Error::config("training noise range needs 0 < t_min < t_max"));
    }
    if !(cfg.learning_rate > 0.0 && cfg.clip_norm > 0.0) {
        return Err(Error::config("learning_rate and clip_norm must be positive"));
    }
    let d = ds.points().dim();
    let mut net = MlpScoreNet::new(d, cfg.width, seed)?;
    let mut params = net.params();
    let mut rng = rng::stream(seed, Stage::Training, 0);
    let (log_lo, log_hi) = (cfg.t_min.ln(), cfg.t_max.ln());
    let mut loss_log = Vec::new();
    let mut window = (0.0, 0usize);

    for iter in 0..cfg.iterations {
        let batch: Vec<TrainingSample> = (0..cfg.batch_size)
            .map(|_| {
                let idx = rng.random_range(0..ds.len());
                let t = rng.random_range(log_lo..log_hi).exp();
                let mut noise = vec![0.0; d];
                rng::fill_normal(&mut rng, &mut noise);
                TrainingSample {
                    x0: ds.points().row(idx).to_vec(),
                    t,
                    noise,
                }
            })
            .collect();
        let (loss, mut grad) = net.loss_and_grad(&batch);
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: iter, loss });
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.clip_norm {
            let s = cfg.clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        net.set_params(&params)?;

        window.0 += loss;
        window.1 += 1;
        if window.1 == cfg.log_every || iter + 1 == cfg.iterations {
            loss_log.push((iter + 1, window.0 / window.1 as f64));
            window = (0.0, 0);
        }
    }
    Ok(TrainOutcome { net, loss_log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::points::Points;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_batch(d: usize, n: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| TrainingSample {
                x0: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                t: rng.random_range(0.1..3.0),
                noise: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = MlpScoreNet::new(3, 4, 17).unwrap();
        // Non-zero biases exercise every parameter.
        let mut p = net.params();
        p.iter_mut().enumerate().for_each(|(i, v)| *v += 0.01 * (i as f64).sin());
        net.set_params(&p).unwrap();
        let batch = toy_batch(3, 5, 1);
        let (_, grad) = net.loss_and_grad(&batch);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus[i] += h;
            minus[i] -= h;
            let mut a = net.clone();
            a.set_params(&plus).unwrap();
            let mut b = net.clone();
            b.set_params(&minus).unwrap();
            let fd = (a.loss_and_grad(&batch).0 - b.loss_and_grad(&batch).0) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(grad[i].abs()).max(1e-3);
            assert!((fd - grad[i]).abs() <= tol, "param {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let net = MlpScoreNet::new(4, 16, 3).unwrap();
        let x = [0.3, -0.7, 1.1, 0.2];
        let t = 0.8;
        let jac = net.input_jacobian(&x, t).unwrap();
        let base = net.eval(&x, t).unwrap();
        for h in [1e-3, 1e-4] {
            for j in 0..4 {
                let mut xp = x;
                xp[j] += h;
                let moved = net.eval(&xp, t).unwrap();
                for i in 0..4 {
                    let fd = (moved[i] - base[i]) / h;
                    // Forward difference: error is O(h).
                    assert!((fd - jac[i * 4 + j]).abs() <= 50.0 * h, "h={h} ({i},{j}): {fd} vs {}", jac[i * 4 + j]);
                }
            }
        }
    }

    #[test]
    fn eval_is_deterministic_with_right_shape() {
        let net = MlpScoreNet::new(5, 8, 0).unwrap();
        let a = net.eval(&[0.1; 5], 0.5).unwrap();
        let b = net.eval(&[0.1; 5], 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|v| v.is_finite()));
        assert!(net.eval(&[0.1; 5], 0.0).is_err());
    }

    #[test]
    fn bytes_round_trip() {
        let net = MlpScoreNet::new(3, 6, 9).unwrap();
        let bytes = net.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(MlpScoreNet::from_bytes(&bytes).unwrap(), net);
        assert!(MlpScoreNet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(MlpScoreNet::from_bytes(&bad).is_err());
    }

    fn small_dataset() -> EmpiricalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let c = if i % 2 == 0 { 1.5 } else { -1.5 };
                vec![c + 0.2 * rng.random_range(-1.0..1.0), c + 0.2 * rng.random_range(-1.0..1.0)]
            })
            .collect();
        EmpiricalDataset::new(Points::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn zero_iterations_returns_initialisation() {
        let ds = small_dataset();
        let cfg = TrainingConfig {
            iterations: 0,
            width: 8,
            ..TrainingConfig::default()
        };
        let out = train_mlp_score(&ds, &cfg, 12).unwrap();
        assert_eq!(out.net, MlpScoreNet::new(2, 8, 12).unwrap());
        assert!(out.loss_log.is_empty());
    }

    #[test]
    fn loss_log_has_one_row_per_interval() {
        let ds = small_dataset();
        let cfg = TrainingConfig {
            iterations: 25,
            batch_size: 8,
            width: 8,
            log_every: 10,
            ..TrainingConfig::default()
        };
        let out = train_mlp_score(&ds, &cfg, 1).unwrap();
        let iters: Vec<usize> = out.loss_log.iter().map(|r| r.0).collect();
        assert_eq!(iters, vec![10, 20, 25]);
    }

    #[test]
    fn divergence_is_reported() {
        let ds = small_dataset();
        let cfg = TrainingConfig {
            iterations: 200,
            batch_size: 8,
            width: 8,
            learning_rate: 1e300,
            clip_norm: 1e300,
            ..TrainingConfig::default()
        };
        match train_mlp_score(&ds, &cfg, 1) {
            Err(Error::Divergence { iteration, .. }) => assert!(iteration < 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn training_reduces_score_error() {
        let ds = small_dataset();
        let cfg = TrainingConfig {
            iterations: 3000,
            batch_size: 32,
            width: 32,
            learning_rate: 2e-2,
            t_min: 0.1,
            t_max: 3.0,
            ..TrainingConfig::default()
        };
        let trained = train_mlp_score(&ds, &cfg, 2).unwrap().net;
        let untrained = MlpScoreNet::new(2, 32, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probes: Vec<(Vec<f64>, f64)> = (0..200)
            .map(|_| {
                let t = rng.random_range(0.2..3.0);
                (vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], t)
            })
            .collect();
        let err = |net: &MlpScoreNet| {
            probes
                .iter()
                .map(|(x, t)| {
                    let a = net.eval(x, *t).unwrap();
                    let b = ds.eval(x, *t).unwrap();
                    t * a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
                })
                .sum::<f64>()
                / probes.len() as f64
        };
        let (before, after) = (err(&untrained), err(&trained));
        assert!(after < before, "trained {after} vs untrained {before}");
    }
}
