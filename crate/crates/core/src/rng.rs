//! Splittable, counter-style randomness.
//!
//! A [`RngKey`] is an immutable 128-bit value. Child keys are derived by
//! hashing `(key, index)`, never by advancing shared state, so the draws made
//! for one particle pair do not depend on how many draws any other pair made.
//! The bits behind a key come from ChaCha8 seeded by the key; Gaussians use the
//! `rand_distr` standard-normal sampler. Not suitable for secrets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey([u64; 2]);

impl RngKey {
    pub fn new(seed: u64) -> Self {
        RngKey([mix64(seed), mix64(seed ^ 0x6A09_E667_F3BC_C909).rotate_left(17)])
    }

    pub fn from_words(words: [u64; 2]) -> Self {
        RngKey(words)
    }

    pub fn words(&self) -> [u64; 2] {
        self.0
    }

    /// Key for child `index`; a pure function of `(self, index)`.
    pub fn fold_in(&self, index: u64) -> RngKey {
        let mut a = self.0[0] ^ 0x9E37_79B9_7F4A_7C15;
        let mut b = self.0[1];
        a = mix64(a.wrapping_add(mix64(index ^ 0xD1B5_4A32_D192_ED03)));
        b = mix64(b ^ a.rotate_left(23));
        a = mix64(a ^ b.rotate_left(41));
        RngKey([a, b])
    }

    /// The bit stream behind this key.
    pub fn stream(&self) -> ChaCha8Rng {
        let words = [
            self.0[0],
            self.0[1],
            mix64(self.0[0] ^ 0x243F_6A88_85A3_08D3),
            mix64(self.0[1] ^ 0x1319_8A2E_0370_7344),
        ];
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    pub fn normals(&self, n: usize) -> Vec<f64> {
        let mut rng = self.stream();
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Uniform draws in `[0, 1)`.
    pub fn uniforms(&self, n: usize) -> Vec<f64> {
        let mut rng = self.stream();
        (0..n).map(|_| rng.random::<f64>()).collect()
    }
}

/// `n` child keys of `key`: `[key.fold_in(0), …, key.fold_in(n - 1)]`.
pub fn split(key: RngKey, n: usize) -> Vec<RngKey> {
    (0..n as u64).map(|i| key.fold_in(i)).collect()
}

/// `2·n_pairs × dim` matrix of antithetic Gaussian perturbations, row-major.
/// Row `2j` is `σ·z_j` with `z_j` drawn from `key.fold_in(j)`; row `2j + 1`
/// is its exact negation.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationBlock {
    dim: usize,
    data: Vec<f64>,
}

impl PerturbationBlock {
    pub fn n_rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.n_rows() / 2
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_antithetic(&self) -> bool {
        true
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        self.data.chunks_exact(self.dim).map(<[f64]>::to_vec).collect()
    }
}

/// Perturbation for one antithetic pair: `(σ·z, −σ·z)`.
pub fn sample_pair(key: RngKey, pair_index: u64, dim: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = key
        .fold_in(pair_index)
        .normals(dim)
        .into_iter()
        .map(|z| sigma * z)
        .collect();
    let neg = pos.iter().map(|&v| -v).collect();
    (pos, neg)
}

pub fn sample_antithetic(key: RngKey, n_pairs: usize, dim: usize, sigma: f64) -> Result<PerturbationBlock> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if n_pairs == 0 || dim == 0 {
        return Err(Error::invalid("n_pairs and dim must be >= 1"));
    }
    let mut data = Vec::with_capacity(2 * n_pairs * dim);
    for j in 0..n_pairs {
        let (pos, neg) = sample_pair(key, j as u64, dim, sigma);
        data.extend(pos);
        data.extend(neg);
    }
    Ok(PerturbationBlock { dim, data })
}
