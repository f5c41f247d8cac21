use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{CodeMatrix, Codebooks};
use crate::linalg;

/// `(r − Σ_m c_{m,b_m})ᵀ Σ (r − Σ_m c_{m,b_m})`, evaluated directly.
pub fn encoding_cost(r: &[f64], code: &[u8], books: &Codebooks, sigma: &DMatrix<f64>) -> f64 {
    let recon = books.reconstruct(code);
    let residual: Vec<f64> = r.iter().zip(&recon).map(|(a, b)| a - b).collect();
    linalg::quad_form(sigma, &residual)
}

/// Beam width of the cold-start search.
pub const BEAM_WIDTH: usize = 4;

/// ICM encoder with the codebook-dependent terms precomputed: `Σ c` for
/// every codeword and the Gram matrix `cᵀ Σ c'` across all codewords.
/// Evaluating one candidate then costs `O(M)`.
pub struct IcmEncoder<'a> {
    books: &'a Codebooks,
    /// `MK × D`, row `(m, k)` holds `Σ c_mk`.
    sigma_c: Vec<f64>,
    /// `MK × MK`, row-major.
    gram: Vec<f64>,
}

impl<'a> IcmEncoder<'a> {
    pub fn new(books: &'a Codebooks, sigma: &DMatrix<f64>) -> Self {
        let (m, k, d) = (books.num_books(), books.num_codewords(), books.dim());
        let mk = m * k;
        let sigma_c: Vec<f64> = (0..mk)
            .into_par_iter()
            .flat_map_iter(|a| linalg::mat_vec(sigma, books.codeword(a / k, a % k)))
            .collect();
        let gram: Vec<f64> = (0..mk)
            .into_par_iter()
            .flat_map_iter(|a| {
                let sca = &sigma_c[a * d..(a + 1) * d];
                (0..mk).map(move |b| linalg::dot(sca, books.codeword(b / k, b % k)))
            })
            .collect();
        IcmEncoder { books, sigma_c, gram }
    }

    fn mk(&self) -> usize {
        self.books.num_books() * self.books.num_codewords()
    }

    /// `rᵀ Σ c_mk` for all codewords.
    fn linear_terms(&self, r: &[f64]) -> Vec<f64> {
        let d = self.books.dim();
        self.sigma_c.chunks(d).map(|sc| linalg::dot(sc, r)).collect()
    }

    /// Cost terms that depend on codeword `kk` of book `m`, other books fixed.
    fn candidate(&self, lin: &[f64], code: &[u8], m: usize, kk: usize) -> f64 {
        let k = self.books.num_codewords();
        let a = m * k + kk;
        let row = &self.gram[a * self.mk()..(a + 1) * self.mk()];
        let mut v = row[a] - 2.0 * lin[a];
        for (m2, &c) in code.iter().enumerate() {
            if m2 != m {
                v += 2.0 * row[m2 * k + c as usize];
            }
        }
        v
    }

    fn best(&self, lin: &[f64], code: &[u8], m: usize) -> u8 {
        let mut best_k = 0usize;
        let mut best_v = f64::INFINITY;
        for kk in 0..self.books.num_codewords() {
            let v = self.candidate(lin, code, m, kk);
            if v < best_v {
                best_v = v;
                best_k = kk;
            }
        }
        best_k as u8
    }

    /// Beam search over partial codes, one book added per step; the best
    /// full code of the final beam. Ties are broken by beam position, book
    /// and codeword index, so the result is deterministic.
    fn beam_start(&self, lin: &[f64], width: usize) -> Vec<u8> {
        let (m_books, k) = (self.books.num_books(), self.books.num_codewords());
        let mk = self.mk();
        // (partial cost without rᵀΣr, code, books assigned)
        let mut beam: Vec<(f64, Vec<u8>, Vec<bool>)> =
            vec![(0.0, vec![0; m_books], vec![false; m_books])];
        for _ in 0..m_books {
            let mut cand: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(beam.len() * m_books * k);
            for (bi, (cost, code, used)) in beam.iter().enumerate() {
                for m in (0..m_books).filter(|&m| !used[m]) {
                    for kk in 0..k {
                        let a = m * k + kk;
                        let row = &self.gram[a * mk..(a + 1) * mk];
                        let mut v = cost + row[a] - 2.0 * lin[a];
                        for q in (0..m_books).filter(|&q| used[q]) {
                            v += 2.0 * row[q * k + code[q] as usize];
                        }
                        cand.push((v, bi, m, kk));
                    }
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| (a.1, a.2, a.3).cmp(&(b.1, b.2, b.3))));
            let mut next: Vec<(f64, Vec<u8>, Vec<bool>)> = Vec::with_capacity(width);
            for (v, bi, m, kk) in cand {
                let (_, code, used) = &beam[bi];
                let mut c = code.clone();
                c[m] = kk as u8;
                let mut u = used.clone();
                u[m] = true;
                // the same partial code can be reached in different book orders
                if !next.iter().any(|(_, c2, u2)| *c2 == c && *u2 == u) {
                    next.push((v, c, u));
                    if next.len() == width {
                        break;
                    }
                }
            }
            beam = next;
        }
        beam.swap_remove(0).1
    }

    /// Encodes `r`. Without a starting code, the start comes from a beam
    /// search of width [`BEAM_WIDTH`]; then `sweeps` full ICM sweeps run.
    pub fn encode(&self, r: &[f64], init: Option<&[u8]>, sweeps: usize) -> Vec<u8> {
        self.encode_traced(r, init, sweeps, |_| {})
    }

    /// As [`encode`](Self::encode), calling `after_update` with the code
    /// after every single-book update of the ICM sweeps.
    pub fn encode_traced(
        &self,
        r: &[f64],
        init: Option<&[u8]>,
        sweeps: usize,
        mut after_update: impl FnMut(&[u8]),
    ) -> Vec<u8> {
        let m_books = self.books.num_books();
        let lin = self.linear_terms(r);
        let mut code = match init {
            Some(c) => c.to_vec(),
            None => self.beam_start(&lin, BEAM_WIDTH),
        };
        for _ in 0..sweeps {
            let mut changed = false;
            for m in 0..m_books {
                let b = self.best(&lin, &code, m);
                changed |= b != code[m];
                code[m] = b;
                after_update(&code);
            }
            if !changed {
                break;
            }
        }
        code
    }
}

/// ICM from a beam-search start against unperturbed `books`.
pub fn icm_encode(r: &[f64], books: &Codebooks, sigma: &DMatrix<f64>, sweeps: usize) -> Vec<u8> {
    IcmEncoder::new(books, sigma).encode(r, None, sweeps)
}

/// Encodes every column of `embeddings` in parallel. With `init`, each row
/// warm-starts from its previous code.
pub fn encode_all(
    embeddings: &DMatrix<f64>,
    books: &Codebooks,
    sigma: &DMatrix<f64>,
    sweeps: usize,
    init: Option<&CodeMatrix>,
) -> CodeMatrix {
    let enc = IcmEncoder::new(books, sigma);
    let data: Vec<u8> = (0..embeddings.ncols())
        .into_par_iter()
        .flat_map_iter(|i| {
            enc.encode(linalg::col(embeddings, i), init.map(|c| c.row(i)), sweeps)
        })
        .collect();
    CodeMatrix::from_flat(embeddings.ncols(), books.num_books(), books.num_codewords(), data)
        .expect("encoder produces in-range codes")
}
