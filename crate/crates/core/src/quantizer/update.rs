use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{encoding_cost, CodeMatrix, Codebooks};
use crate::error::{HsqError, Result};
use crate::linalg;

const REFINE_STEPS: usize = 50;

/// `B Bᵀ` (`MK × MK`) from code histograms: diagonal blocks are per-book
/// counts, off-diagonal blocks are bivariate counts of book pairs.
pub fn code_gram(codes: &CodeMatrix) -> DMatrix<f64> {
    let (m, k) = (codes.num_books(), codes.num_codewords());
    let mk = m * k;
    let chunk = 1024;
    let counts = codes
        .as_slice()
        .par_chunks(chunk * m.max(1))
        .map(|rows| {
            let mut h = vec![0u64; mk * mk];
            for row in rows.chunks(m) {
                for (m1, &c1) in row.iter().enumerate() {
                    let a = m1 * k + c1 as usize;
                    for (m2, &c2) in row.iter().enumerate() {
                        h[a * mk + m2 * k + c2 as usize] += 1;
                    }
                }
            }
            h
        })
        .reduce(
            || vec![0u64; mk * mk],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    DMatrix::from_iterator(mk, mk, counts.into_iter().map(|c| c as f64))
}

/// `R Bᵀ` (`D × MK`): column `(m, k)` sums the embeddings coded `k` in book `m`.
pub fn gather_sums(embeddings: &DMatrix<f64>, codes: &CodeMatrix) -> DMatrix<f64> {
    let (m, k) = (codes.num_books(), codes.num_codewords());
    let d = embeddings.nrows();
    let mut out = DMatrix::zeros(d, m * k);
    // sequential over points so the float sums have a fixed order
    for (i, row) in codes.rows().enumerate() {
        let r = linalg::col(embeddings, i);
        for (mm, &c) in row.iter().enumerate() {
            for (o, x) in linalg::col_mut(&mut out, mm * k + c as usize).iter_mut().zip(r) {
                *o += x;
            }
        }
    }
    out
}

/// Closed-form `C = R Bᵀ (B Bᵀ)⁻¹` with a ridge `δ = 1e-6·tr(BBᵀ)/MK`.
///
/// `BBᵀ` is singular whenever `M ≥ 2` (every book's block sums to the same
/// count vector), so the ridge solve is followed by iterative refinement
/// against the unregularized system, which converges to the minimum-norm
/// solution. Codewords that no point uses come out as zero.
pub fn update_codebooks(embeddings: &DMatrix<f64>, codes: &CodeMatrix) -> Result<Codebooks> {
    let (m, k) = (codes.num_books(), codes.num_codewords());
    let d = embeddings.nrows();
    let mk = m * k;
    if embeddings.ncols() != codes.len() {
        return Err(HsqError::Validation(format!(
            "{} embeddings but {} code rows",
            embeddings.ncols(),
            codes.len()
        )));
    }
    let gram = code_gram(codes);
    let rhs = gather_sums(embeddings, codes).transpose(); // MK × D
    let delta = 1e-6 * gram.trace().max(1.0) / mk as f64;
    let mut ridged = gram.clone();
    for a in 0..mk {
        ridged[(a, a)] += delta;
    }
    let chol = nalgebra::linalg::Cholesky::new(ridged).ok_or_else(|| {
        HsqError::Numerical(
            "codebook normal equations are singular after ridge; increase the ridge or add data"
                .into(),
        )
    })?;
    let mut x = chol.solve(&rhs);
    let r_max = embeddings.amax().max(f64::MIN_POSITIVE);
    let tol = 1e-6 * r_max;
    let mut resid_max = f64::INFINITY;
    for _ in 0..REFINE_STEPS {
        let resid = &rhs - &gram * &x;
        resid_max = resid.amax();
        if resid_max < 1e-3 * tol {
            break;
        }
        x += chol.solve(&resid);
    }
    if !(resid_max < tol) {
        return Err(HsqError::Numerical(format!(
            "codebook update residual {resid_max:e} exceeds {tol:e}"
        )));
    }
    let mut data = Vec::with_capacity(mk * d);
    for a in 0..mk {
        for j in 0..d {
            data.push(x[(a, j)]);
        }
    }
    Codebooks::from_flat(m, k, d, data)
}

/// Objective (3): `Σ_n (r_n − Σ_m c_{m,b_mn})ᵀ Σ (r_n − …)`.
pub fn quantization_objective(
    embeddings: &DMatrix<f64>,
    books: &Codebooks,
    codes: &CodeMatrix,
    sigma: &DMatrix<f64>,
) -> f64 {
    let terms: Vec<f64> = (0..codes.len())
        .into_par_iter()
        .map(|i| encoding_cost(linalg::col(embeddings, i), codes.row(i), books, sigma))
        .collect();
    terms.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_codes(n: usize, m: usize, k: usize, rng: &mut ChaCha8Rng) -> CodeMatrix {
        CodeMatrix::from_flat(n, m, k, (0..n * m).map(|_| rng.random_range(0..k) as u8).collect())
            .unwrap()
    }

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
        a.clone().pseudo_inverse(1e-10).unwrap()
    }

    #[test]
    fn histogram_gram_equals_one_hot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let codes = random_codes(3000, 3, 5, &mut rng);
        let b = codes.one_hot();
        assert_eq!(code_gram(&codes), &b * b.transpose());
    }

    #[test]
    fn gather_equals_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let codes = random_codes(60, 2, 4, &mut rng);
        let r = random_matrix(5, 60, &mut rng);
        let dense = &r * codes.one_hot().transpose();
        assert!((gather_sums(&r, &codes) - dense).amax() < 1e-9);
    }

    #[test]
    fn single_book_gives_cluster_means() {
        let r = DMatrix::from_column_slice(2, 4, &[0.0, 0.0, 2.0, 2.0, 5.0, 1.0, 7.0, 3.0]);
        let codes = CodeMatrix::from_flat(4, 1, 2, vec![0, 0, 1, 1]).unwrap();
        let books = update_codebooks(&r, &codes).unwrap();
        for (got, want) in books.codeword(0, 0).iter().zip([1.0, 1.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        for (got, want) in books.codeword(0, 1).iter().zip([6.0, 2.0]) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, k, n, d) = (2, 4, 50, 8);
        let codes = random_codes(n, m, k, &mut rng);
        let r = random_matrix(d, n, &mut rng);
        let a = random_matrix(d, d, &mut rng);
        let sigma = &a * a.transpose();

        let books = update_codebooks(&r, &codes).unwrap();
        let got = quantization_objective(&r, &books, &codes, &sigma);

        let bt = codes.one_hot().transpose();
        let c_oracle = (pinv(&bt) * r.transpose()).transpose(); // D × MK
        let mut oracle = 0.0;
        let resid = &r - &c_oracle * bt.transpose();
        for i in 0..n {
            let e: Vec<f64> = resid.column(i).iter().copied().collect();
            oracle += linalg::quad_form(&sigma, &e);
        }
        assert!((got - oracle).abs() <= 1e-8 * oracle.abs(), "{got} vs {oracle}");
    }

    #[test]
    fn residual_postcondition_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let codes = random_codes(200, 3, 8, &mut rng);
        let r = random_matrix(6, 200, &mut rng);
        let books = update_codebooks(&r, &codes).unwrap();
        let c = DMatrix::from_fn(6, 24, |j, a| books.codeword(a / 8, a % 8)[j]);
        let resid = gather_sums(&r, &codes) - c * code_gram(&codes);
        assert!(resid.amax() < 1e-6 * r.amax());
    }

    #[test]
    fn unused_codewords_are_zero() {
        let r = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let codes = CodeMatrix::from_flat(2, 1, 3, vec![0, 2]).unwrap();
        let books = update_codebooks(&r, &codes).unwrap();
        assert!(books.codeword(0, 1).iter().all(|x| x.abs() < 1e-12));
    }
}
