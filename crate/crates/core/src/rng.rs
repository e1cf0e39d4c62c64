//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream addressed by
//! `(master seed, stage, index)`:
//!
//! ```text
//! key    = splitmix64(master ^ splitmix64(stage as u64))
//! rng    = ChaCha8Rng::seed_from_u64(key)
//! rng.set_stream(index)
//! ```
//!
//! `index` is the trajectory (or repetition) number, so results do not depend
//! on batch size, thread count or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type StreamRng = ChaCha8Rng;

/// Tags separating the independent stages of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stage {
    /// Per-trajectory noise of a sampler.
    Sampler = 1,
    /// Initial draws from the Gaussian prior.
    Prior = 2,
    /// Exact draws from the noised data distribution.
    TrueDraw = 3,
    /// Reference draws from the data distribution itself.
    DataDraw = 4,
    /// Sampler noise inside the error-decomposition window.
    Window = 5,
    /// Dataset construction.
    Dataset = 6,
    /// Network initialisation.
    Init = 7,
    /// Mini-batch sampling during training.
    Training = 8,
    /// Seeds of repeated sweep runs.
    Repetition = 9,
    /// Coupled noise of the contraction study.
    Coupling = 10,
    /// Perturbation fields.
    Perturbation = 11,
    /// W1 sub-sampling.
    Subsample = 12,
}

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed, e.g. the seed of repetition `index` of a sweep.
pub fn derive_seed(master: u64, stage: Stage, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stage as u64)) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(master: u64, stage: Stage, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(master ^ splitmix64(stage as u64)));
    rng.set_stream(index);
    rng
}

/// Fill `out` with i.i.d. standard normal draws.
pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}

pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
