use hsq_core::eval::{ap_from_relevance, map_at, precision_at_n, GroundTruth};
use hsq_core::hypersphere_embed::{
    adaptive_margin, hard_negatives, margin_loss, min_hinge_gap, TransformLayer,
};
use hsq_core::io::{LabelRecord, SearchResult};
use hsq_core::linalg;
use hsq_core::quantizer::{
    encoding_cost, gather_sums, icm_encode, quantization_objective, update_codebooks,
};
use hsq_core::tag_semantics::{
    build_correlation_graph, build_sphere, enhance, merge_sparse_tags, ImageTags,
    TagEmbeddingMatrix,
};
use hsq_core::{CodeMatrix, Codebooks, RetrievalIndex, SemanticSphere, SphereParams};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gauss(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = linalg::norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

fn sphere_of(d: usize, t: usize, rng: &mut ChaCha8Rng) -> SemanticSphere {
    let mut s = gauss(d, t, rng);
    for j in 0..t {
        let n = s.column(j).norm();
        s.column_mut(j).apply(|x| *x /= n);
    }
    SemanticSphere::new(s, vec![ImageTags { image: 0, tags: vec![0] }], vec![], true).unwrap()
}

fn random_codes(n: usize, m: usize, k: usize, rng: &mut ChaCha8Rng) -> CodeMatrix {
    CodeMatrix::from_flat(n, m, k, (0..n * m).map(|_| rng.random_range(0..k) as u8).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // tag semantics

    #[test]
    fn enhancement_is_a_neighbor_mean(seed in any::<u64>(), k in 0usize..6, tau in -1.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = TagEmbeddingMatrix::new(gauss(5, 9, &mut rng)).unwrap();
        let g = build_correlation_graph(&t, k, tau);
        let e = enhance(&t, &g);
        let a = g.to_dense();
        for i in 0..9 {
            // weights: row i of A, normalized; nonnegative and summing to 1
            let deg: f64 = a.row(i).sum();
            prop_assert!(a[(i, i)] == 1.0 && deg >= 1.0);
            let mut comb = vec![0.0; 5];
            for j in 0..9 {
                prop_assert!(a[(i, j)] >= 0.0);
                for (c, x) in comb.iter_mut().zip(t.column(j)) {
                    *c += a[(i, j)] / deg * x;
                }
            }
            let resid = comb.iter().zip(e.column(i).iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert!(resid < 1e-9);
        }
    }

    #[test]
    fn merge_is_deterministic_and_partitions(seed in any::<u64>(), eps in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gauss(3, 15, &mut rng);
        let a = merge_sparse_tags(&x, eps);
        let b = merge_sparse_tags(&x, eps);
        prop_assert_eq!(a.old_to_new(), b.old_to_new());
        prop_assert_eq!(a.merged().as_slice(), b.merged().as_slice());
        let mut covered: Vec<usize> = (0..a.new_count()).flat_map(|n| a.preimage(n)).collect();
        covered.sort_unstable();
        prop_assert_eq!(covered, (0..15).collect::<Vec<_>>());
    }

    #[test]
    fn sphere_covariance_is_psd_with_unit_trace(seed in any::<u64>(), t in 2usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tags = TagEmbeddingMatrix::new(gauss(6, t, &mut rng)).unwrap();
        let asg = vec![hsq_core::io::TagAssignment { image: 0, tags: vec![0] }];
        let (sphere, _) = build_sphere(&tags, &asg, &SphereParams { tau: 0.5, ..SphereParams::default() }).unwrap();
        let cov = sphere.covariance();
        prop_assert_eq!(cov, &cov.transpose());
        prop_assert!(cov.clone().symmetric_eigenvalues().iter().all(|&l| l >= -1e-8));
        prop_assert!((cov.trace() - sphere.len() as f64).abs() < 1e-6);
    }

    // hypersphere embedding

    #[test]
    fn forward_output_is_unit(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = TransformLayer::init(7, 11, seed);
        let v: Vec<f64> = gauss(11, 1, &mut rng).iter().map(|x| x * scale).collect();
        let r = layer.forward(&v).unwrap();
        prop_assert!((linalg::norm(&r) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hard_negatives_dominate_the_rest(seed in any::<u64>(), k_neg in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sphere = sphere_of(5, 10, &mut rng);
        let r = unit(gauss(5, 1, &mut rng).iter().copied().collect());
        let pos = vec![1, 4];
        let neg = hard_negatives(&r, &sphere, &pos, k_neg);
        prop_assert_eq!(neg.len(), k_neg.min(8));
        let sim = |j: usize| linalg::dot(sphere.column(j), &r);
        let worst_kept = neg.iter().map(|&j| sim(j)).fold(f64::INFINITY, f64::min);
        for j in (0..10).filter(|j| !pos.contains(j) && !neg.contains(j)) {
            prop_assert!(sim(j) <= worst_kept);
        }
    }

    #[test]
    fn margin_shrinks_as_tags_agree(gamma in 0.1f64..4.0, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let pair = |c: f64| (vec![1.0, 0.0], vec![c, (1.0 - c * c).max(0.0).sqrt()]);
        let (p1, n1) = pair(lo);
        let (p2, n2) = pair(hi);
        prop_assert!(adaptive_margin(&p1, &n1, gamma) >= adaptive_margin(&p2, &n2, gamma) - 1e-12);
        let m = adaptive_margin(&p1, &n1, gamma);
        prop_assert!((adaptive_margin(&p1, &n1, gamma + 1e-9) - m).abs() < 1e-6);
    }

    #[test]
    fn margin_loss_is_nonnegative_and_zero_means_separated(seed in any::<u64>(), gamma in 0.2f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sphere = sphere_of(4, 6, &mut rng);
        // r near a positive tag so the zero-loss case actually occurs
        let w = rng.random_range(0.0..5.0);
        let noise: Vec<f64> = gauss(4, 1, &mut rng).iter().copied().collect();
        let r = unit(sphere.column(0).iter().zip(&noise).map(|(s, z)| w * s + z).collect());
        let pos = vec![0];
        let neg = hard_negatives(&r, &sphere, &pos, 10);
        let l = margin_loss(&r, &sphere, &pos, &neg, gamma);
        prop_assert!(l >= 0.0);
        if l == 0.0 {
            prop_assert!(min_hinge_gap(&r, &sphere, &pos, &neg, gamma) >= 0.0);
            for &j in &neg {
                let need = adaptive_margin(sphere.column(0), sphere.column(j), gamma);
                prop_assert!(linalg::dot(sphere.column(0), &r) - linalg::dot(sphere.column(j), &r) >= need);
            }
        }
    }

    // quantizer

    #[test]
    fn icm_never_beats_exhaustive(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, d) = (2, 3, 4);
        let books = Codebooks::from_flat(m, k, d, gauss(m * k * d, 1, &mut rng).as_slice().to_vec()).unwrap();
        let a = gauss(d, d, &mut rng);
        let sigma = &a * a.transpose();
        let r: Vec<f64> = gauss(d, 1, &mut rng).as_slice().to_vec();
        let mut best = f64::INFINITY;
        for x in 0..k as u8 {
            for y in 0..k as u8 {
                best = best.min(encoding_cost(&r, &[x, y], &books, &sigma));
            }
        }
        let c = icm_encode(&r, &books, &sigma, 3);
        prop_assert!(encoding_cost(&r, &c, &books, &sigma) >= best - 1e-12 * best.abs().max(1.0));
    }

    #[test]
    fn solved_codebooks_are_locally_optimal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n, d) = (2, 4, 30, 5);
        let r = gauss(d, n, &mut rng);
        let codes = random_codes(n, m, k, &mut rng);
        let a = gauss(d, d, &mut rng);
        let sigma = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
        let books = update_codebooks(&r, &codes).unwrap();
        let base = quantization_objective(&r, &books, &codes, &sigma);
        for _ in 0..5 {
            let (bm, bk) = (rng.random_range(0..m), rng.random_range(0..k));
            let dir = unit(gauss(d, 1, &mut rng).as_slice().to_vec());
            for sign in [1.0, -1.0] {
                let mut p = books.clone();
                for (c, x) in p.codeword_mut(bm, bk).iter_mut().zip(&dir) {
                    *c += sign * 1e-3 * x;
                }
                let v = quantization_objective(&r, &p, &codes, &sigma);
                prop_assert!(v >= base - 1e-8 * base.abs());
            }
        }
    }

    #[test]
    fn gather_matches_dense_product(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n, d) = (3, 4, 25, 6);
        let r = gauss(d, n, &mut rng);
        let codes = random_codes(n, m, k, &mut rng);
        let dense = &r * codes.one_hot().transpose();
        prop_assert!((gather_sums(&r, &codes) - dense).amax() < 1e-9);
    }

    // retrieval

    #[test]
    fn top_n_is_a_prefix(seed in any::<u64>(), a in 1usize..40, b in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, d, n) = (3, 4, 6, 40);
        let books = Codebooks::from_flat(m, k, d, gauss(m * k * d, 1, &mut rng).as_slice().to_vec()).unwrap();
        let idx = RetrievalIndex::with_sequential_ids(books, random_codes(n, m, k, &mut rng)).unwrap();
        let q = unit(gauss(d, 1, &mut rng).as_slice().to_vec());
        let (lo, hi) = (a.min(b), a.max(b));
        let short = idx.search(&q, lo).unwrap();
        let long = idx.search(&q, hi).unwrap();
        prop_assert_eq!(&long[..lo], &short[..]);
    }

    #[test]
    fn ranking_ignores_positive_query_scale(seed in any::<u64>(), e in -20i32..20, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, d, n) = (2, 8, 5, 60);
        let books = Codebooks::from_flat(m, k, d, gauss(m * k * d, 1, &mut rng).as_slice().to_vec()).unwrap();
        let idx = RetrievalIndex::with_sequential_ids(books, random_codes(n, m, k, &mut rng)).unwrap();
        let raw: Vec<f64> = gauss(d, 1, &mut rng).as_slice().to_vec();
        let base = idx.search(&unit(raw.clone()), n).unwrap();
        // power-of-two scales normalize to the identical vector
        let p = 2f64.powi(e);
        let scaled = idx.search(&unit(raw.iter().map(|x| x * p).collect()), n).unwrap();
        prop_assert_eq!(&scaled, &base);
        let other = idx.search(&unit(raw.iter().map(|x| x * c).collect()), n).unwrap();
        for (x, y) in other.iter().zip(&base) {
            prop_assert!((x.1 - y.1).abs() < 1e-12);
        }
    }

    // eval

    #[test]
    fn ap_is_bounded_and_ignores_trailing_misses(rel in prop::collection::vec(any::<bool>(), 1..40), extra in 0usize..10, cutoff in 1usize..50) {
        let total = rel.iter().filter(|&&r| r).count() + extra;
        let ap = ap_from_relevance(&rel, total, cutoff);
        prop_assert!((0.0..=1.0).contains(&ap));
        // shuffle the misses after the last hit inside the cutoff
        if let Some(last) = rel.iter().take(cutoff).rposition(|&r| r) {
            let mut moved = rel.clone();
            moved[last + 1..].reverse();
            let tail_hits = rel[last + 1..].iter().any(|&r| r);
            if !tail_hits || cutoff <= last + 1 {
                prop_assert_eq!(ap_from_relevance(&moved, total, cutoff), ap);
            }
        }
    }

    #[test]
    fn p_at_n_falls_when_hits_come_first(hits in 0usize..20, misses in 0usize..20) {
        let rel: Vec<bool> = (0..hits + misses).map(|i| i < hits).collect();
        let ns: Vec<usize> = (1..=rel.len().max(1)).collect();
        let p = precision_at_n(&rel, &ns);
        for w in p.windows(2) {
            prop_assert!(w[1].1 <= w[0].1);
        }
    }
}

#[test]
fn random_rankings_score_the_relevant_fraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (classes, per) = (4u32, 100u32);
    let mut labels: Vec<LabelRecord> = (0..classes * per)
        .map(|i| LabelRecord { image: i, labels: vec![i % classes] })
        .collect();
    let db: Vec<u32> = (0..classes * per).collect();
    let queries: Vec<u32> = (0..200).map(|q| 10_000 + q).collect();
    for &q in &queries {
        labels.push(LabelRecord { image: q, labels: vec![q % classes] });
    }
    let gt = GroundTruth::from_records(&labels);
    let results: Vec<SearchResult> = queries
        .iter()
        .map(|&q| {
            let mut ids = db.clone();
            ids.shuffle(&mut rng);
            SearchResult { query: q, results: ids.into_iter().map(|i| (i, 0.0)).collect() }
        })
        .collect();
    // with R = N the AP of a random ranking tends to the relevant fraction
    let map = map_at(&results, &gt, &db, db.len());
    assert!((map - 0.25).abs() < 0.05, "MAP {map}");
}
