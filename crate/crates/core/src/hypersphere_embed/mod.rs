//! Transform layer, adaptive cosine margin loss with hard-negative mining,
//! analytic gradients and the Adam step for the network parameters.

mod gradient;
mod layer;
mod loss;
mod train;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{HsqError, Result};
use crate::tag_semantics::SemanticSphere;

pub use gradient::{batch_objective, total_gradient, GradientAccumulator, QuantTargets};
pub use layer::{ForwardCache, TransformLayer, EPSILON_NORM};
pub use loss::{adaptive_margin, hard_negatives, margin_loss, min_hinge_gap};
pub use train::{train_epoch, AdamState, EpochReport};

/// Training hyperparameters for the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lambda: f64,
    /// Negative-set size `K_n`, clamped to the available non-positives.
    pub k_neg: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs of W updates per outer alternation.
    pub epochs: usize,
    /// Margin-only epochs before the joint phase when `staged_mode` is set.
    pub stage_one_epochs: usize,
    pub seed: u64,
    pub staged_mode: bool,
    /// ℓ2-normalize the layer output (off for the unnormalized ablation).
    pub normalize_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 1.0,
            lambda: 1e-3,
            k_neg: 1000,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 1,
            stage_one_epochs: 10,
            seed: 0,
            staged_mode: false,
            normalize_mode: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HsqError::Config(m));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma = {} must be > 0", self.gamma));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be >= 0", self.lambda));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate = {} must be >= 0", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }

    /// λ in effect for `phase`.
    pub fn lambda_for(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Embedding => 0.0,
            Phase::Joint => self.lambda,
        }
    }
}

/// Training phase; the embedding phase ignores the quantization term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Embedding,
    Joint,
}

/// One supervised image: its feature column and sphere tag indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image: u32,
    pub column: usize,
    pub tags: Vec<usize>,
}

/// Database features (`V × N`, column = image id) plus the supervised
/// subset. Images without tags stay in `features` for encoding.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub features: DMatrix<f64>,
    pub samples: Vec<Sample>,
}

impl TrainingSet {
    pub fn new(features: DMatrix<f64>, sphere: &SemanticSphere) -> Result<Self> {
        let n = features.ncols();
        let mut samples = Vec::with_capacity(sphere.image_tags().len());
        for it in sphere.image_tags() {
            let column = it.image as usize;
            if column >= n {
                return Err(HsqError::Validation(format!(
                    "image {} has tags but only {} feature records exist",
                    it.image, n
                )));
            }
            samples.push(Sample { image: it.image, column, tags: it.tags.clone() });
        }
        if samples.is_empty() {
            return Err(HsqError::Validation("no image has a non-empty tag set".into()));
        }
        Ok(TrainingSet { features, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.nrows()
    }
}
