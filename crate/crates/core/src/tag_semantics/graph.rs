use nalgebra::DMatrix;
use rayon::prelude::*;

use super::TagEmbeddingMatrix;
use crate::linalg;

/// Sparse binary adjacency over tags, stored as per-row neighbor lists.
///
/// Row `i` always contains `i`. A row is not required to match its
/// transpose: k-NN relations are asymmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationGraph {
    neighbors: Vec<Vec<usize>>,
    k: usize,
    tau: f64,
}

impl CorrelationGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Neighbors of row `i` in ascending index order, self included.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// Dense 0/1 adjacency, for inspection and tests.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, row) in self.neighbors.iter().enumerate() {
            for &j in row {
                a[(i, j)] = 1.0;
            }
        }
        a
    }
}

/// `a_ij = 1` iff `j` is among the `k` most cosine-similar other tags of `i`
/// and the similarity reaches `tau`, or `i == j`. Equal similarities at the
/// k-NN cutoff go to the smaller column index.
pub fn build_correlation_graph(tags: &TagEmbeddingMatrix, k: usize, tau: f64) -> CorrelationGraph {
    let n = tags.len();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let c = tags.column(j);
            let nrm = linalg::norm(c);
            c.iter().map(|x| x / nrm).collect()
        })
        .collect();

    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, linalg::dot(&unit[i], &unit[j])))
                .collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut row: Vec<usize> = cand
                .into_iter()
                .take(k)
                .filter(|&(_, c)| c >= tau)
                .map(|(j, _)| j)
                .collect();
            row.push(i);
            row.sort_unstable();
            row
        })
        .collect();

    CorrelationGraph { neighbors, k, tau }
}

/// One hop of neighbor averaging: column `i` of the result is the mean of the
/// columns of `tags` over row `i` of the graph (row-normalized `A`).
pub fn enhance(tags: &TagEmbeddingMatrix, graph: &CorrelationGraph) -> DMatrix<f64> {
    let d = tags.dim();
    let cols: Vec<Vec<f64>> = (0..tags.len())
        .into_par_iter()
        .map(|i| {
            let row = graph.neighbors(i);
            let mut acc = vec![0.0; d];
            for &j in row {
                for (a, x) in acc.iter_mut().zip(tags.column(j)) {
                    *a += x;
                }
            }
            let w = 1.0 / row.len() as f64;
            acc.iter_mut().for_each(|a| *a *= w);
            acc
        })
        .collect();
    DMatrix::from_iterator(d, cols.len(), cols.into_iter().flatten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn tags_from(cols: &[&[f64]]) -> TagEmbeddingMatrix {
        let d = cols[0].len();
        TagEmbeddingMatrix::new(DMatrix::from_iterator(
            d,
            cols.len(),
            cols.iter().flat_map(|c| c.iter().copied()),
        ))
        .unwrap()
    }

    fn random_tags(n: usize, d: usize, seed: u64) -> TagEmbeddingMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng));
        TagEmbeddingMatrix::new(m).unwrap()
    }

    #[test]
    fn single_tag_self_loop() {
        let t = tags_from(&[&[1.0, 2.0]]);
        let g = build_correlation_graph(&t, 5, 0.9);
        assert_eq!(g.to_dense(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn three_tags_hand_cosines() {
        // cos(1,2) = 0.9, cos(1,3) = 0.5, cos(2,3) = 0.5 by construction below
        let a = 0.9f64;
        let t1 = [1.0, 0.0, 0.0];
        let t2 = [a, (1.0 - a * a).sqrt(), 0.0];
        // t3 with t1·t3 = 0.5 and t2·t3 = 0.5
        let x = 0.5;
        let y = (0.5 - a * x) / (1.0 - a * a).sqrt();
        let z = (1.0 - x * x - y * y).sqrt();
        let t3 = [x, y, z];
        let t = tags_from(&[&t1, &t2, &t3]);

        // brute-force cosine oracle
        let cos = |u: &[f64], v: &[f64]| linalg::dot(u, v) / (linalg::norm(u) * linalg::norm(v));
        assert!((cos(&t1, &t2) - 0.9).abs() < 1e-12);
        assert!((cos(&t1, &t3) - 0.5).abs() < 1e-12);
        assert!((cos(&t2, &t3) - 0.5).abs() < 1e-12);

        let g = build_correlation_graph(&t, 2, 0.75);
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.to_dense(), expected);
    }

    #[test]
    fn graph_matches_brute_force_definition() {
        let t = random_tags(25, 6, 11);
        let (k, tau) = (4, 0.2);
        let g = build_correlation_graph(&t, k, tau);
        for i in 0..t.len() {
            let ci = t.column(i);
            let mut sims: Vec<(usize, f64)> = (0..t.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let cj = t.column(j);
                    (j, linalg::dot(ci, cj) / (linalg::norm(ci) * linalg::norm(cj)))
                })
                .collect();
            sims.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let knn: Vec<usize> = sims.iter().take(k).map(|p| p.0).collect();
            for j in 0..t.len() {
                let sim = sims.iter().find(|p| p.0 == j).map(|p| p.1);
                let want = j == i || (knn.contains(&j) && sim.unwrap() >= tau);
                assert_eq!(g.contains(i, j), want, "({i},{j})");
            }
            assert!(g.degree(i) <= k + 1);
        }
    }

    #[test]
    fn knn_ties_prefer_smaller_index() {
        // tags 1, 2, 3 are identical, so all tie for tag 0's nearest neighbor
        let t = tags_from(&[&[1.0, 0.1], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let g = build_correlation_graph(&t, 1, -1.0);
        assert_eq!(g.neighbors(0), &[0, 1]);
    }

    #[test]
    fn identity_graph_is_noop() {
        let t = random_tags(8, 5, 3);
        let g = build_correlation_graph(&t, 0, 0.0);
        assert_eq!(enhance(&t, &g), t.vectors().clone());
    }

    #[test]
    fn mutual_pair_averages() {
        let t = tags_from(&[&[1.0, 0.0], &[0.8, 0.6]]);
        let g = build_correlation_graph(&t, 1, 0.5);
        let e = enhance(&t, &g);
        assert_eq!(e.column(0), e.column(1));
        assert!((e[(0, 0)] - 0.9).abs() < 1e-15 && (e[(1, 0)] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn enhancement_matches_dense_product() {
        let t = random_tags(10, 7, 19);
        let g = build_correlation_graph(&t, 3, -0.3);
        let a = g.to_dense();
        let mut a_norm = a.clone();
        for i in 0..a.nrows() {
            let s: f64 = a.row(i).sum();
            a_norm.row_mut(i).apply(|x| *x /= s);
        }
        let oracle = t.vectors() * a_norm.transpose();
        let got = enhance(&t, &g);
        assert!((oracle - got).abs().max() < 1e-9);
    }
}
