//! MAP@R, precision-recall and precision@N under the shared-label rule.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{LabelRecord, SearchResult};

/// Evaluation labels per image id. Missing images have no labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    labels: HashMap<u32, Vec<u32>>,
}

impl GroundTruth {
    pub fn from_records(records: &[LabelRecord]) -> Self {
        let labels = records
            .iter()
            .map(|r| {
                let mut l = r.labels.clone();
                l.sort_unstable();
                l.dedup();
                (r.image, l)
            })
            .collect();
        GroundTruth { labels }
    }

    pub fn labels_of(&self, image: u32) -> &[u32] {
        self.labels.get(&image).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn relevant(&self, a: u32, b: u32) -> bool {
        relevance(self.labels_of(a), self.labels_of(b))
    }

    /// All labelled image ids, ascending.
    pub fn images(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.labels.keys().copied().collect();
        ids.sort_unstable();
        ids
    }
}

/// True iff the label sets intersect.
pub fn relevance(a: &[u32], b: &[u32]) -> bool {
    a.iter().any(|x| b.contains(x))
}

/// `Σ_{k≤R} P(k)·rel(k) / min(R, total_relevant)`; 0 when nothing is relevant.
pub fn ap_from_relevance(rel: &[bool], total_relevant: usize, cutoff: usize) -> f64 {
    let denom = cutoff.min(total_relevant);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in rel.iter().take(cutoff).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Relevance pattern of `ranked` for `query`, skipping the query itself,
/// and the number of relevant images in `database` other than the query.
pub fn relevance_pattern(
    query: u32,
    ranked: &[u32],
    gt: &GroundTruth,
    database: &[u32],
) -> (Vec<bool>, usize) {
    let q = gt.labels_of(query);
    let rel = ranked
        .iter()
        .filter(|&&id| id != query)
        .map(|&id| relevance(q, gt.labels_of(id)))
        .collect();
    let total = database
        .iter()
        .filter(|&&id| id != query && relevance(q, gt.labels_of(id)))
        .count();
    (rel, total)
}

pub fn average_precision(
    query: u32,
    ranked: &[u32],
    gt: &GroundTruth,
    database: &[u32],
    cutoff: usize,
) -> f64 {
    let (rel, total) = relevance_pattern(query, ranked, gt, database);
    ap_from_relevance(&rel, total, cutoff)
}

fn ranked_ids(r: &SearchResult) -> Vec<u32> {
    r.results.iter().map(|p| p.0).collect()
}

/// Mean AP@R over all result lists; 0 for no queries.
pub fn map_at(results: &[SearchResult], gt: &GroundTruth, database: &[u32], cutoff: usize) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    let aps: Vec<f64> = results
        .par_iter()
        .map(|r| average_precision(r.query, &ranked_ids(r), gt, database, cutoff))
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// Non-interpolated `(recall, precision)` points: one at recall 0 carrying
/// the precision of the first hit, one per relevant rank, and one at the end
/// of the list. Empty when nothing is relevant.
pub fn pr_curve(rel: &[bool], total_relevant: usize) -> Vec<(f64, f64)> {
    if total_relevant == 0 || rel.is_empty() {
        return Vec::new();
    }
    let mut pts = Vec::new();
    let mut hits = 0usize;
    for (k, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            let p = hits as f64 / (k + 1) as f64;
            if pts.is_empty() {
                pts.push((0.0, p));
            }
            pts.push((hits as f64 / total_relevant as f64, p));
        }
    }
    let end = (hits as f64 / total_relevant as f64, hits as f64 / rel.len() as f64);
    if pts.last() != Some(&end) {
        pts.push(end);
    }
    pts
}

/// `(n, hits in top n / n)` for each requested `n`.
pub fn precision_at_n(rel: &[bool], ns: &[usize]) -> Vec<(usize, f64)> {
    ns.iter()
        .map(|&n| {
            if n == 0 {
                return (0, 0.0);
            }
            let hits = rel.iter().take(n).filter(|&&r| r).count();
            (n, hits as f64 / n as f64)
        })
        .collect()
}

/// Aggregate metrics across queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    /// Cutoff `R` used for `map`.
    pub cutoff: usize,
    pub queries: usize,
    /// Mean `(recall, precision)` over queries at each rank in `ranks`.
    pub pr_curve: Vec<(f64, f64)>,
    pub p_at_n: Vec<(usize, f64)>,
}

/// Rank grid for the aggregated curves: 1, 2, 5, 10, 20, 50, … up to `len`.
pub fn rank_grid(len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut base = 1usize;
    'outer: loop {
        for f in [1, 2, 5] {
            let n = base * f;
            if n > len {
                break 'outer;
            }
            out.push(n);
        }
        base *= 10;
    }
    if len > 0 && out.last() != Some(&len) {
        out.push(len);
    }
    out
}

/// MAP@R plus mean PR and P@N curves over the rank grid of the longest list.
pub fn evaluate(
    results: &[SearchResult],
    gt: &GroundTruth,
    database: &[u32],
    cutoff: usize,
) -> MetricReport {
    let patterns: Vec<(Vec<bool>, usize)> = results
        .par_iter()
        .map(|r| relevance_pattern(r.query, &ranked_ids(r), gt, database))
        .collect();
    let q = patterns.len().max(1) as f64;
    let map = patterns.iter().map(|(rel, t)| ap_from_relevance(rel, *t, cutoff)).sum::<f64>() / q;
    let longest = patterns.iter().map(|p| p.0.len()).max().unwrap_or(0);
    let grid = rank_grid(longest);

    let mut pr_curve = Vec::with_capacity(grid.len());
    let mut p_at_n = Vec::with_capacity(grid.len());
    for &n in &grid {
        let (mut rec, mut prec) = (0.0, 0.0);
        for (rel, total) in &patterns {
            let hits = rel.iter().take(n).filter(|&&r| r).count() as f64;
            if *total > 0 {
                rec += hits / *total as f64;
            }
            prec += hits / n as f64;
        }
        pr_curve.push((rec / q, prec / q));
        p_at_n.push((n, prec / q));
    }
    MetricReport { map, cutoff, queries: patterns.len(), pr_curve, p_at_n }
}

/// Database ids for evaluation when no index is given: every labelled image
/// that is not one of the queries.
pub fn database_from_labels(gt: &GroundTruth, results: &[SearchResult]) -> Vec<u32> {
    let queries: HashSet<u32> = results.iter().map(|r| r.query).collect();
    gt.images().into_iter().filter(|id| !queries.contains(id)).collect()
}
