use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Codebooks;
use crate::linalg;

/// Per-coordinate population variance of the columns of `r`.
pub fn diag_covariance(r: &DMatrix<f64>) -> Vec<f64> {
    let (d, n) = r.shape();
    if n == 0 {
        return vec![0.0; d];
    }
    let mut mean = vec![0.0; d];
    for j in 0..n {
        for (m, x) in mean.iter_mut().zip(linalg::col(r, j)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for j in 0..n {
        for ((v, x), m) in var.iter_mut().zip(linalg::col(r, j)).zip(&mean) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n as f64);
    var
}

/// Annealed codebook noise `C̃ = C + (T(i)/M)·ε`, `ε ~ N(0, diag(var))`,
/// `T(i) = √(1 − i/I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSchedule {
    pub total: usize,
    pub noise_var: Vec<f64>,
    pub seed: u64,
}

impl PerturbationSchedule {
    pub fn new(total: usize, noise_var: Vec<f64>, seed: u64) -> Self {
        PerturbationSchedule { total, noise_var, seed }
    }

    pub fn temperature(&self, i: usize) -> f64 {
        if self.total == 0 || i >= self.total {
            return 0.0;
        }
        (1.0 - i as f64 / self.total as f64).sqrt()
    }

    /// Each codeword draws from its own stream keyed by `(seed, i, m, k)`.
    pub fn perturb(&self, books: &Codebooks, i: usize) -> Codebooks {
        let t = self.temperature(i);
        let mut out = books.clone();
        if t == 0.0 {
            return out;
        }
        let (m_books, k) = (books.num_books(), books.num_codewords());
        let scale = t / m_books as f64;
        let sd: Vec<f64> = self.noise_var.iter().map(|v| v.max(0.0).sqrt()).collect();
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(i as u64).to_le_bytes());
        for m in 0..m_books {
            for kk in 0..k {
                let mut rng = ChaCha8Rng::from_seed(key);
                rng.set_stream((m * k + kk) as u64);
                for (c, s) in out.codeword_mut(m, kk).iter_mut().zip(&sd) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *c += scale * s * z;
                }
            }
        }
        out
    }
}
