use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Codebooks;
use crate::error::{HsqError, Result};
use crate::linalg;

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, cent) in centroids.iter().enumerate() {
        let d = linalg::sq_dist(point, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm from a seeded k-means++ start over the columns of
/// `points`. Empty clusters are re-seeded with the point farthest from its
/// current centroid. Returns `k` centroids.
pub fn kmeans(points: &DMatrix<f64>, k: usize, iters: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = points.ncols();
    if k == 0 || n < k {
        return Err(HsqError::Validation(format!(
            "k-means needs at least K = {k} points, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = |i: usize| linalg::col(points, i);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.push(p(first).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| linalg::sq_dist(p(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if t < w {
                        break;
                    }
                    t -= w;
                }
            }
            pick.unwrap()
        } else {
            // all remaining mass is on duplicates: take the first unused point
            (0..n).find(|&i| !chosen[i]).unwrap()
        };
        chosen[next] = true;
        centroids.push(p(next).to_vec());
        let c = centroids.last().unwrap().clone();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(linalg::sq_dist(p(i), &c));
        }
    }

    let d = points.nrows();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let nearest_all: Vec<(usize, f64)> =
            (0..n).into_par_iter().map(|i| nearest(p(i), &centroids)).collect();
        let changed = nearest_all.iter().zip(&assign).any(|(a, &b)| a.0 != b);
        for (a, na) in assign.iter_mut().zip(&nearest_all) {
            *a = na.0;
        }

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, x) in sums[assign[i]].iter_mut().zip(p(i)) {
                *s += x;
            }
        }
        let mut dist: Vec<f64> = nearest_all.iter().map(|x| x.1).collect();
        for c in 0..k {
            if counts[c] > 0 {
                let w = 1.0 / counts[c] as f64;
                centroids[c] = sums[c].iter().map(|s| s * w).collect();
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .unwrap();
                centroids[c] = p(far).to_vec();
                dist[far] = 0.0;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(centroids)
}

/// Residual chaining: book 1 is k-means on the embeddings, book `m` is
/// k-means on what books `1..m` leave unexplained.
pub fn init_codebooks(
    embeddings: &DMatrix<f64>,
    m: usize,
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebooks> {
    let d = embeddings.nrows();
    let mut residual = embeddings.clone();
    let mut books = Codebooks::zeros(m, k, d);
    for book in 0..m {
        let cents = kmeans(&residual, k, iters, seed.wrapping_add(book as u64))?;
        for (c, cent) in cents.iter().enumerate() {
            books.codeword_mut(book, c).copy_from_slice(cent);
        }
        for i in 0..residual.ncols() {
            let col = linalg::col_mut(&mut residual, i);
            let (c, _) = nearest(col, &cents);
            for (x, y) in col.iter_mut().zip(&cents[c]) {
                *x -= y;
            }
        }
    }
    Ok(books)
}
