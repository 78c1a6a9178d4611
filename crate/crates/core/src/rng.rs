//! Seed derivation for independent, reproducible random streams.
//!
//! Every Monte Carlo trial draws from its own stream keyed by the master
//! seed and a tuple of tags (point index, trial index, purpose, ...), so the
//! outcome never depends on how the work is scheduled across threads.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{CMat, CVec};

pub type Stream = ChaCha8Rng;

/// Purpose tags keep streams for different quantities disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Channel = 1,
    Noise = 2,
    TrainingHybrid = 3,
    DataHybrid = 4,
    Check = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(master: u64, purpose: Purpose, tags: &[u64]) -> Stream {
    let mut all = Vec::with_capacity(tags.len() + 1);
    all.push(purpose as u64);
    all.extend_from_slice(tags);
    Stream::seed_from_u64(derive_seed(master, &all))
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Column-major fill, so the draw order matches `vec(·)`.
pub fn complex_normal_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    variance: f64,
) -> CMat {
    let data: Vec<Complex64> = (0..rows * cols)
        .map(|_| complex_normal(rng, variance))
        .collect();
    CMat::from_vec(rows, cols, data)
}

pub fn complex_normal_vector<R: Rng + ?Sized>(rng: &mut R, len: usize, variance: f64) -> CVec {
    CVec::from_iterator(len, (0..len).map(|_| complex_normal(rng, variance)))
}

/// Matrix of iid uniform phases on the unit circle.
pub fn random_phases<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    let data: Vec<Complex64> = (0..rows * cols)
        .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    CMat::from_vec(rows, cols, data)
}
