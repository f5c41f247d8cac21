use nalgebra::DMatrix;

use crate::linalg;

/// Surjection from original tag columns onto merged columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeRemap {
    old_to_new: Vec<usize>,
    merged: DMatrix<f64>,
}

impl MergeRemap {
    pub fn identity(vectors: DMatrix<f64>) -> Self {
        MergeRemap { old_to_new: (0..vectors.ncols()).collect(), merged: vectors }
    }

    pub fn from_parts(old_to_new: Vec<usize>, merged: DMatrix<f64>) -> Self {
        debug_assert!(old_to_new.iter().all(|&j| j < merged.ncols()));
        MergeRemap { old_to_new, merged }
    }

    pub fn map(&self, old: usize) -> Option<usize> {
        self.old_to_new.get(old).copied()
    }

    pub fn old_to_new(&self) -> &[usize] {
        &self.old_to_new
    }

    pub fn old_count(&self) -> usize {
        self.old_to_new.len()
    }

    pub fn new_count(&self) -> usize {
        self.merged.ncols()
    }

    /// Merged embeddings, one column per new index.
    pub fn merged(&self) -> &DMatrix<f64> {
        &self.merged
    }

    /// Original indices mapped to `new`, ascending.
    pub fn preimage(&self, new: usize) -> Vec<usize> {
        self.old_to_new
            .iter()
            .enumerate()
            .filter(|&(_, &n)| n == new)
            .map(|(o, _)| o)
            .collect()
    }
}

/// Single deterministic pass in ascending column order. Each unprocessed
/// anchor collects every unprocessed column strictly closer than `epsilon`;
/// a set of two or more is replaced by its mean and leaves the pool.
pub fn merge_sparse_tags(enhanced: &DMatrix<f64>, epsilon: f64) -> MergeRemap {
    let (d, n) = enhanced.shape();
    let eps2 = epsilon * epsilon;
    let mut processed = vec![false; n];
    let mut old_to_new = vec![usize::MAX; n];
    let mut merged: Vec<f64> = Vec::with_capacity(d * n);
    let mut next = 0usize;

    for i in 0..n {
        if processed[i] {
            continue;
        }
        let anchor = linalg::col(enhanced, i);
        let mut members = vec![i];
        for j in (i + 1)..n {
            if !processed[j] && linalg::sq_dist(anchor, linalg::col(enhanced, j)) < eps2 {
                members.push(j);
            }
        }
        let mut mean = vec![0.0; d];
        for &j in &members {
            for (m, x) in mean.iter_mut().zip(linalg::col(enhanced, j)) {
                *m += x;
            }
        }
        if members.len() > 1 {
            let w = 1.0 / members.len() as f64;
            mean.iter_mut().for_each(|m| *m *= w);
        }
        for &j in &members {
            processed[j] = true;
            old_to_new[j] = next;
        }
        merged.extend_from_slice(&mean);
        next += 1;
    }

    MergeRemap { old_to_new, merged: DMatrix::from_vec(d, next, merged) }
}
