use nalgebra::DMatrix;
use rayon::prelude::*;

use super::loss::margin_loss_and_grad;
use super::{hard_negatives, Phase, TrainConfig, TrainingSet, TransformLayer};
use crate::error::{HsqError, Result};
use crate::linalg;
use crate::quantizer::{CodeMatrix, Codebooks};
use crate::tag_semantics::SemanticSphere;

/// Frozen quantizer state for the `λ Q_n` term; code rows are indexed by
/// feature column.
#[derive(Debug, Clone, Copy)]
pub struct QuantTargets<'a> {
    pub books: &'a Codebooks,
    pub codes: &'a CodeMatrix,
}

/// `∂/∂W Σ_n (L_n + λ Q_n)` over a batch and the summed loss terms.
#[derive(Debug, Clone)]
pub struct GradientAccumulator {
    pub grad: DMatrix<f64>,
    pub margin: f64,
    /// Unweighted `Σ Q_n`.
    pub quant: f64,
    pub samples: usize,
}

struct SampleTerm {
    dz: Vec<f64>,
    margin: f64,
    quant: f64,
}

fn sample_term(
    idx: usize,
    data: &TrainingSet,
    layer: &TransformLayer,
    sphere: &SemanticSphere,
    quant: Option<QuantTargets<'_>>,
    cfg: &TrainConfig,
    lambda: f64,
    want_grad: bool,
) -> Result<SampleTerm> {
    let s = &data.samples[idx];
    let v = linalg::col(&data.features, s.column);
    let cache = layer
        .forward_cached(v)
        .map_err(|e| HsqError::Numerical(format!("image {}: {e}", s.image)))?;
    let r = &cache.output;
    let neg = hard_negatives(r, sphere, &s.tags, cfg.k_neg);
    let mut g = vec![0.0; r.len()];
    let margin = margin_loss_and_grad(
        r,
        sphere,
        &s.tags,
        &neg,
        cfg.gamma,
        if want_grad { Some(&mut g) } else { None },
    );
    let mut q = 0.0;
    if let Some(t) = quant.filter(|_| lambda > 0.0) {
        let r_hat = t.books.reconstruct(t.codes.row(s.column));
        let scale = if sphere.is_normalized() {
            let n = linalg::norm(&r_hat);
            if n > 0.0 {
                1.0 / n
            } else {
                0.0
            }
        } else {
            1.0
        };
        // Q_n = (r − scale·r̂)ᵀ Σ_S (r − scale·r̂), r̂ frozen
        let diff: Vec<f64> = r.iter().zip(&r_hat).map(|(a, b)| a - scale * b).collect();
        let sd = linalg::mat_vec(sphere.covariance(), &diff);
        q = linalg::dot(&diff, &sd);
        if want_grad {
            for (gi, x) in g.iter_mut().zip(&sd) {
                *gi += 2.0 * lambda * x;
            }
        }
    }
    let dz = if want_grad { layer.backward(&cache, &g) } else { Vec::new() };
    Ok(SampleTerm { dz, margin, quant: q })
}

fn terms(
    batch: &[usize],
    data: &TrainingSet,
    layer: &TransformLayer,
    sphere: &SemanticSphere,
    quant: Option<QuantTargets<'_>>,
    cfg: &TrainConfig,
    phase: Phase,
    want_grad: bool,
) -> Result<Vec<SampleTerm>> {
    let lambda = cfg.lambda_for(phase);
    batch
        .par_iter()
        .map(|&i| sample_term(i, data, layer, sphere, quant, cfg, lambda, want_grad))
        .collect()
}

/// Analytic gradient w.r.t. `W` of `Σ_{n ∈ batch} (L_n + λ Q_n)`, where `λ`
/// is zero in the embedding phase. Per-image terms run in parallel; the
/// reduction over images is in batch order for every entry, so the result
/// does not depend on the thread count.
pub fn total_gradient(
    batch: &[usize],
    data: &TrainingSet,
    layer: &TransformLayer,
    sphere: &SemanticSphere,
    quant: Option<QuantTargets<'_>>,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<GradientAccumulator> {
    let t = terms(batch, data, layer, sphere, quant, cfg, phase, true)?;
    let (d, v) = (layer.dim(), layer.feature_dim());
    let cols: Vec<Vec<f64>> = (0..v)
        .into_par_iter()
        .map(|j| {
            let mut c = vec![0.0; d];
            for (term, &i) in t.iter().zip(batch) {
                let vj = data.features[(j, data.samples[i].column)];
                if vj != 0.0 {
                    for (ck, dk) in c.iter_mut().zip(&term.dz) {
                        *ck += dk * vj;
                    }
                }
            }
            c
        })
        .collect();
    let grad = DMatrix::from_iterator(d, v, cols.into_iter().flatten());
    let margin: f64 = t.iter().map(|x| x.margin).sum();
    let quant_sum: f64 = t.iter().map(|x| x.quant).sum();
    if !linalg::all_finite(grad.as_slice()) || !margin.is_finite() || !quant_sum.is_finite() {
        let images: Vec<u32> = batch.iter().take(8).map(|&i| data.samples[i].image).collect();
        return Err(HsqError::Numerical(format!(
            "non-finite gradient in batch of {} (first images {:?}); margin {margin}, quant {quant_sum}",
            batch.len(),
            images
        )));
    }
    Ok(GradientAccumulator { grad, margin, quant: quant_sum, samples: batch.len() })
}

/// `(Σ L_n, Σ Q_n)` over a batch without gradients; `Q_n` is zero when
/// `λ` is zero for `phase` or no quantizer is given.
pub fn batch_objective(
    batch: &[usize],
    data: &TrainingSet,
    layer: &TransformLayer,
    sphere: &SemanticSphere,
    quant: Option<QuantTargets<'_>>,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<(f64, f64)> {
    let t = terms(batch, data, layer, sphere, quant, cfg, phase, false)?;
    Ok((t.iter().map(|x| x.margin).sum(), t.iter().map(|x| x.quant).sum()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tag_semantics::ImageTags;

    #[test]
    fn flat_region_has_zero_gradient() {
        // r = e1 for every input; tag 0 = e1, tag 1 = e2 → margin 1 ≥ Δ = 1
        let sphere = SemanticSphere::new(
            DMatrix::identity(2, 2),
            vec![ImageTags { image: 0, tags: vec![0] }],
            vec![],
            true,
        )
        .unwrap();
        let w = DMatrix::from_row_slice(2, 1, &[50.0, 0.0]);
        let layer = TransformLayer::from_weights(w);
        let data = TrainingSet::new(DMatrix::from_element(1, 1, 1.0), &sphere).unwrap();
        let cfg = TrainConfig { lambda: 0.0, ..TrainConfig::default() };
        let acc = total_gradient(&[0], &data, &layer, &sphere, None, &cfg, Phase::Joint).unwrap();
        assert_eq!(acc.margin, 0.0);
        assert!(acc.grad.iter().all(|&g| g == 0.0));
    }
}
