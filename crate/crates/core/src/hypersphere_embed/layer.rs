use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HsqError, Result};
use crate::linalg;

/// Guard under which the activation is treated as dead.
pub const EPSILON_NORM: f64 = 1e-12;

/// `g(v) = tanh(W v) / ‖tanh(W v)‖₂`, mapping `V`-dim features onto the
/// unit sphere in the `D`-dim semantic space.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformLayer {
    weights: DMatrix<f64>,
    normalize: bool,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `tanh(W v)`.
    pub activation: Vec<f64>,
    /// `‖tanh(W v)‖₂`, or 1 when normalization is off.
    pub norm: f64,
    pub output: Vec<f64>,
}

impl TransformLayer {
    /// Uniform init in `[-1/√V, 1/√V]`.
    pub fn init(dim: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (feature_dim as f64).sqrt();
        let weights = DMatrix::from_fn(dim, feature_dim, |_, _| rng.random_range(-bound..=bound));
        TransformLayer { weights, normalize: true }
    }

    pub fn from_weights(weights: DMatrix<f64>) -> Self {
        TransformLayer { weights, normalize: true }
    }

    /// Disabling normalization keeps `tanh(W v)` as the embedding.
    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn normalizes(&self) -> bool {
        self.normalize
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.weights
    }

    /// Semantic dimension `D`.
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Feature dimension `V`.
    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(v)?.output)
    }

    pub fn forward_cached(&self, v: &[f64]) -> Result<ForwardCache> {
        if v.len() != self.feature_dim() {
            return Err(HsqError::Validation(format!(
                "feature length {} != layer input dim {}",
                v.len(),
                self.feature_dim()
            )));
        }
        let mut activation = linalg::mat_vec(&self.weights, v);
        activation.iter_mut().for_each(|x| *x = x.tanh());
        if !self.normalize {
            let output = activation.clone();
            return Ok(ForwardCache { activation, norm: 1.0, output });
        }
        let norm = linalg::norm(&activation);
        if norm <= EPSILON_NORM || !norm.is_finite() {
            return Err(HsqError::Numerical(format!(
                "degenerate input: activation norm {norm:e} at or below {EPSILON_NORM:e}"
            )));
        }
        let output = activation.iter().map(|x| x / norm).collect();
        Ok(ForwardCache { activation, norm, output })
    }

    /// Maps `∂L/∂r` to `∂L/∂(W v)` through normalization and tanh.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Vec<f64> {
        let grad_act: Vec<f64> = if self.normalize {
            // (I − r rᵀ) g / ‖u‖
            let r = &cache.output;
            let proj = linalg::dot(r, grad_output);
            r.iter()
                .zip(grad_output)
                .map(|(ri, gi)| (gi - ri * proj) / cache.norm)
                .collect()
        } else {
            grad_output.to_vec()
        };
        grad_act
            .iter()
            .zip(&cache.activation)
            .map(|(g, u)| g * (1.0 - u * u))
            .collect()
    }

    /// Embeds every column of a `V × N` feature matrix into a `D × N` matrix.
    pub fn embed_all(&self, features: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        use rayon::prelude::*;
        let cols: Vec<Vec<f64>> = (0..features.ncols())
            .into_par_iter()
            .map(|j| {
                self.forward(linalg::col(features, j)).map_err(|e| match e {
                    HsqError::Numerical(m) => HsqError::Numerical(format!("image {j}: {m}")),
                    other => other,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DMatrix::from_iterator(self.dim(), cols.len(), cols.into_iter().flatten()))
    }
}
