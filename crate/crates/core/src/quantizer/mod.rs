//! Additive quantizer: `r ≈ Σ_m C_m b_m` with one codeword per codebook.
//!
//! Codes are learned by ICM under the `Σ_S`-weighted reconstruction error,
//! optionally on codebooks perturbed with annealed Gaussian noise; codebooks
//! are refit in closed form from code histograms.

mod alternate;
mod icm;
mod kmeans;
mod perturb;
mod update;

use nalgebra::DMatrix;

use crate::error::{HsqError, Result};
use crate::linalg;
use crate::tag_semantics::SemanticSphere;

pub use alternate::{
    alternate_optimize, fit_quantizer, AlternationResult, IterationReport, PhaseSummary,
};
pub use icm::{encode_all, encoding_cost, icm_encode, IcmEncoder};
pub use kmeans::{init_codebooks, kmeans};
pub use perturb::{diag_covariance, PerturbationSchedule};
pub use update::{code_gram, gather_sums, quantization_objective, update_codebooks};

/// `M` codebooks of `K` codewords in `D` dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    m: usize,
    k: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Codebooks {
    pub fn zeros(m: usize, k: usize, dim: usize) -> Self {
        Codebooks { m, k, dim, data: vec![0.0; m * k * dim] }
    }

    /// `data[(m·K + k)·D + d]` is coordinate `d` of codeword `k` in book `m`.
    pub fn from_flat(m: usize, k: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * k * dim {
            return Err(HsqError::Validation(format!(
                "codebook payload has {} values, expected {}×{}×{}",
                data.len(),
                m,
                k,
                dim
            )));
        }
        if !linalg::all_finite(&data) {
            return Err(HsqError::Numerical("non-finite codebook entry".into()));
        }
        Ok(Codebooks { m, k, dim, data })
    }

    pub fn num_books(&self) -> usize {
        self.m
    }

    pub fn num_codewords(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codeword(&self, m: usize, k: usize) -> &[f64] {
        let start = (m * self.k + k) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn codeword_mut(&mut self, m: usize, k: usize) -> &mut [f64] {
        let start = (m * self.k + k) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `Σ_m c_{m, code[m]}`.
    pub fn reconstruct(&self, code: &[u8]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (m, &k) in code.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.codeword(m, k as usize)) {
                *o += c;
            }
        }
        out
    }

    /// Code length in bits, `M · log2 K` (rounded up per subcode).
    pub fn code_bits(&self) -> usize {
        self.m * crate::io::code_bits(self.k) as usize
    }
}

/// `N × M` subcode indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    n: usize,
    m: usize,
    k: usize,
    data: Vec<u8>,
}

impl CodeMatrix {
    pub fn from_flat(n: usize, m: usize, k: usize, data: Vec<u8>) -> Result<Self> {
        if k == 0 || k > 256 {
            return Err(HsqError::Validation(format!(
                "K = {k} not supported, subcodes are one byte (1 ≤ K ≤ 256)"
            )));
        }
        if data.len() != n * m {
            return Err(HsqError::Validation(format!(
                "code payload has {} entries, expected {}×{}",
                data.len(),
                n,
                m
            )));
        }
        let codes = CodeMatrix { n, m, k, data };
        codes.validate_against(k)?;
        Ok(codes)
    }

    /// Rejects any entry `≥ k`, naming the first offending row.
    pub fn validate_against(&self, k: usize) -> Result<()> {
        for (i, row) in self.data.chunks(self.m.max(1)).enumerate() {
            if let Some((m, &c)) = row.iter().enumerate().find(|(_, &c)| c as usize >= k) {
                return Err(HsqError::Validation(format!(
                    "code entry {c} at row {i}, book {m} is out of range for K = {k}"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_books(&self) -> usize {
        self.m
    }

    pub fn num_codewords(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.data.chunks(self.m)
    }

    /// Dense one-hot `MK × N` indicator matrix.
    pub fn one_hot(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.m * self.k, self.n);
        for (i, row) in self.rows().enumerate() {
            for (m, &c) in row.iter().enumerate() {
                b[(m * self.k + c as usize, i)] = 1.0;
            }
        }
        b
    }

    /// Same codes reinterpreted with a tighter codeword count.
    pub fn with_codewords(mut self, k: usize) -> Result<Self> {
        self.validate_against(k)?;
        self.k = k;
        Ok(self)
    }
}

/// Quantizer hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    pub num_books: usize,
    pub num_codewords: usize,
    /// Outer alternations `I`.
    pub iters: usize,
    pub icm_sweeps: usize,
    pub kmeans_iters: usize,
    /// Annealed codebook noise during code updates.
    pub perturb: bool,
    pub seed: u64,
}

impl Default for QuantConfig {
    fn default() -> Self {
        QuantConfig {
            num_books: 4,
            num_codewords: 256,
            iters: 30,
            icm_sweeps: 3,
            kmeans_iters: 25,
            perturb: true,
            seed: 0,
        }
    }
}

/// `Σ_i (⟨s_i, r⟩ − cos(s_i, r̂))²` over every sphere column.
///
/// On a normalized sphere `r̂` is rescaled to unit length; a zero `r̂`
/// contributes similarity 0 to every term. On an unnormalized sphere
/// plain inner products are used.
pub fn quantization_cosine_loss(sphere: &SemanticSphere, r: &[f64], r_hat: &[f64]) -> f64 {
    let scale = if sphere.is_normalized() {
        let n = linalg::norm(r_hat);
        if n > 0.0 {
            1.0 / n
        } else {
            log::warn!("zero-norm reconstruction in quantization loss");
            0.0
        }
    } else {
        1.0
    };
    (0..sphere.len())
        .map(|i| {
            let s = sphere.column(i);
            let d = linalg::dot(s, r) - scale * linalg::dot(s, r_hat);
            d * d
        })
        .sum()
}
