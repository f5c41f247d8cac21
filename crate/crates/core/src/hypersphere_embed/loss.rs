use std::cmp::Ordering;

use crate::linalg;
use crate::tag_semantics::SemanticSphere;

/// Indices of the `min(k_neg, |S \ S_n|)` non-positive tags with the largest
/// similarity to `r`, in rank order (ties to the smaller index).
///
/// `positives` must be sorted ascending.
pub fn hard_negatives(
    r: &[f64],
    sphere: &SemanticSphere,
    positives: &[usize],
    k_neg: usize,
) -> Vec<usize> {
    let mut cand: Vec<(usize, f64)> = (0..sphere.len())
        .filter(|j| positives.binary_search(j).is_err())
        .map(|j| (j, linalg::dot(sphere.column(j), r)))
        .collect();
    if cand.is_empty() {
        log::debug!("positive set covers every tag; no negatives");
        return Vec::new();
    }
    let rank = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
    };
    let take = k_neg.min(cand.len());
    if take == 0 {
        return Vec::new();
    }
    if take < cand.len() {
        cand.select_nth_unstable_by(take - 1, rank);
        cand.truncate(take);
    }
    cand.sort_by(rank);
    cand.into_iter().map(|(j, _)| j).collect()
}

/// `Δ = 2^(1−γ) · (1 − ⟨s⁺, s⁻⟩)^γ`, with the base clamped at zero.
pub fn adaptive_margin(s_pos: &[f64], s_neg: &[f64], gamma: f64) -> f64 {
    let base = (1.0 - linalg::dot(s_pos, s_neg)).max(0.0);
    2f64.powf(1.0 - gamma) * base.powf(gamma)
}

/// Adaptive cosine margin loss of one image.
pub fn margin_loss(
    r: &[f64],
    sphere: &SemanticSphere,
    positives: &[usize],
    negatives: &[usize],
    gamma: f64,
) -> f64 {
    margin_loss_and_grad(r, sphere, positives, negatives, gamma, None)
}

/// Loss value; when `grad` is given, adds `∂L/∂r` into it. The hinge
/// contributes a subgradient of 0 at its kink.
pub(crate) fn margin_loss_and_grad(
    r: &[f64],
    sphere: &SemanticSphere,
    positives: &[usize],
    negatives: &[usize],
    gamma: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let neg_sims: Vec<f64> = negatives.iter().map(|&j| linalg::dot(sphere.column(j), r)).collect();
    let mut neg_weight = vec![0usize; negatives.len()];
    let mut loss = 0.0;
    for &i in positives {
        let sp = sphere.column(i);
        let pos_sim = linalg::dot(sp, r);
        let mut active = 0usize;
        for (jn, &j) in negatives.iter().enumerate() {
            let delta = adaptive_margin(sp, sphere.column(j), gamma);
            let h = delta - pos_sim + neg_sims[jn];
            if h > 0.0 {
                loss += h;
                active += 1;
                neg_weight[jn] += 1;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            if active > 0 {
                let w = active as f64;
                for (gk, sk) in g.iter_mut().zip(sp) {
                    *gk -= w * sk;
                }
            }
        }
    }
    if let Some(g) = grad {
        for (jn, &j) in negatives.iter().enumerate() {
            if neg_weight[jn] > 0 {
                let w = neg_weight[jn] as f64;
                for (gk, sk) in g.iter_mut().zip(sphere.column(j)) {
                    *gk += w * sk;
                }
            }
        }
    }
    loss
}

/// Smallest distance of any hinge argument to its kink, for gradient checks.
pub fn min_hinge_gap(
    r: &[f64],
    sphere: &SemanticSphere,
    positives: &[usize],
    negatives: &[usize],
    gamma: f64,
) -> f64 {
    let mut gap = f64::INFINITY;
    for &i in positives {
        let sp = sphere.column(i);
        let pos_sim = linalg::dot(sp, r);
        for &j in negatives {
            let sn = sphere.column(j);
            let h = adaptive_margin(sp, sn, gamma) - pos_sim + linalg::dot(sn, r);
            gap = gap.min(h.abs());
        }
    }
    gap
}
