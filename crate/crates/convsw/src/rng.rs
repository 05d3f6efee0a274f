//! Deterministic random sampling with counter-based substreams.
//!
//! Every Monte Carlo projection draws from its own substream keyed by the
//! projection index, so results are bit-identical under any parallel
//! schedule. `substream(i)` is a pure function of `(master_seed, i)`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// A master seed from which independent substreams are derived.
#[derive(Debug, Clone, Copy)]
pub struct RandomSource {
    master_seed: u64,
}

/// One deterministic draw sequence; not shared across threads.
pub type Substream = ChaCha8Rng;

// splitmix64 finalizer; mixes the master seed with a fork label.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Returns the `index`-th substream. Identical `(seed, index)` always
    /// yields the identical sequence, independent of call order elsewhere.
    pub fn substream(&self, index: u64) -> Substream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(index);
        rng
    }

    /// Derives an independent source, e.g. one per repeat of an experiment.
    pub fn fork(&self, label: u64) -> RandomSource {
        RandomSource::new(mix(self.master_seed ^ mix(label)))
    }
}

/// Draws a vector uniformly from the unit sphere in `R^n`
/// (standard normals divided by their Euclidean norm).
pub fn sample_unit_vector(n: usize, rng: &mut Substream) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidShape("zero-dimensional direction".into()));
    }
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // all-zero draw has probability zero; redraw if it happens
        if norm > 0.0 {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
    }
}

/// Draws a `c x k x k` tensor uniformly from the unit Frobenius sphere.
///
/// Consumes the stream exactly like [`sample_unit_vector`] with `n = c*k*k`,
/// so a one-layer full-size kernel equals a conventional unit direction
/// draw bit for bit.
pub fn sample_unit_tensor(channels: usize, kernel: usize, rng: &mut Substream) -> Result<Tensor3> {
    if channels == 0 || kernel == 0 {
        return Err(Error::InvalidShape(format!(
            "zero kernel shape {channels}x{kernel}x{kernel}"
        )));
    }
    let v = sample_unit_vector(channels * kernel * kernel, rng)?;
    Tensor3::new(channels, kernel, v)
}
