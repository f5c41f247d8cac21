use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{total_gradient, Phase, QuantTargets, TrainConfig, TrainingSet, TransformLayer};
use crate::error::{HsqError, Result};
use crate::tag_semantics::SemanticSphere;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const DIVERGENCE_LOSS: f64 = 1e6;

/// Adam moments for `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(dim: usize, feature_dim: usize) -> Self {
        AdamState {
            first: DMatrix::zeros(dim, feature_dim),
            second: DMatrix::zeros(dim, feature_dim),
            step: 0,
        }
    }

    pub fn for_layer(layer: &TransformLayer) -> Self {
        Self::zeros(layer.dim(), layer.feature_dim())
    }

    /// One bias-corrected Adam update of `w` with gradient `grad`.
    pub fn step(&mut self, w: &mut DMatrix<f64>, grad: &DMatrix<f64>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((wi, &g), m), v) in w
            .iter_mut()
            .zip(grad.iter())
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *wi -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Mean per-image losses over one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub margin: f64,
    pub quant: f64,
    pub batches: usize,
}

impl EpochReport {
    pub fn total(&self, lambda: f64) -> f64 {
        self.margin + lambda * self.quant
    }
}

/// One shuffled pass of mini-batch Adam over `data`. The shuffle is seeded
/// by `cfg.seed` and `epoch`. Losses are measured before each step.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    data: &TrainingSet,
    layer: &mut TransformLayer,
    adam: &mut AdamState,
    sphere: &SemanticSphere,
    quant: Option<QuantTargets<'_>>,
    cfg: &TrainConfig,
    phase: Phase,
    epoch: u64,
) -> Result<EpochReport> {
    if data.is_empty() {
        return Err(HsqError::Validation("training set is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);

    let (mut margin, mut quant_sum, mut batches) = (0.0, 0.0, 0usize);
    for batch in order.chunks(cfg.batch_size.max(1)) {
        let acc = total_gradient(batch, data, layer, sphere, quant, cfg, phase)?;
        margin += acc.margin;
        quant_sum += acc.quant;
        batches += 1;
        let grad = acc.grad / batch.len() as f64;
        adam.step(layer.weights_mut(), &grad, cfg.learning_rate);
    }
    let n = data.len() as f64;
    let report = EpochReport { margin: margin / n, quant: quant_sum / n, batches };
    let total = report.total(cfg.lambda_for(phase));
    if !(total <= DIVERGENCE_LOSS) {
        return Err(HsqError::Numerical(format!(
            "training diverged in epoch {epoch}: mean loss {total:e} (margin {:e}, quant {:e}); \
             lower the learning rate",
            report.margin, report.quant
        )));
    }
    Ok(report)
}
