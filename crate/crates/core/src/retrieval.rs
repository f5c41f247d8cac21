//! Asymmetric quantizer distance search: per-query `M × K` lookup tables
//! gathered over the stored codes.

use std::cmp::Ordering;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{HsqError, Result};
use crate::io;
use crate::linalg;
use crate::quantizer::{CodeMatrix, Codebooks};

/// `table[m][k] = r_q · c_mk`.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    m: usize,
    k: usize,
    data: Vec<f64>,
}

impl LookupTable {
    pub fn get(&self, m: usize, k: usize) -> f64 {
        self.data[m * self.k + k]
    }

    pub fn num_books(&self) -> usize {
        self.m
    }

    pub fn num_codewords(&self) -> usize {
        self.k
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn build_lookup_table(r_q: &[f64], books: &Codebooks) -> LookupTable {
    let (m, k) = (books.num_books(), books.num_codewords());
    let mut data = Vec::with_capacity(m * k);
    for mm in 0..m {
        for kk in 0..k {
            data.push(linalg::dot(r_q, books.codeword(mm, kk)));
        }
    }
    LookupTable { m, k, data }
}

/// `Σ_m table[m][code_m]`.
#[inline]
pub fn aqd_score(table: &LookupTable, code: &[u8]) -> f64 {
    let mut s = 0.0;
    for (m, &c) in code.iter().enumerate() {
        s += table.data[m * table.k + c as usize];
    }
    s
}

/// Work done by one search: multiply-adds for the table and table reads
/// for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchCost {
    pub table_mults: usize,
    pub gathers: usize,
}

fn rank(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Codebooks, codes and the image id of every code row.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    books: Codebooks,
    codes: CodeMatrix,
    ids: Vec<u32>,
}

const BOOKS_FILE: &str = "codebooks.hsqc";
const CODES_FILE: &str = "codes.hsqb";
const IDS_FILE: &str = "ids.json";

impl RetrievalIndex {
    pub fn new(books: Codebooks, codes: CodeMatrix, ids: Vec<u32>) -> Result<Self> {
        if codes.len() != ids.len() {
            return Err(HsqError::Validation(format!(
                "{} code rows but {} ids",
                codes.len(),
                ids.len()
            )));
        }
        if !codes.is_empty() && codes.num_books() != books.num_books() {
            return Err(HsqError::Validation(format!(
                "codes use {} books, codebooks have {}",
                codes.num_books(),
                books.num_books()
            )));
        }
        codes.validate_against(books.num_codewords())?;
        Ok(RetrievalIndex { books, codes, ids })
    }

    /// Index over database rows `0..N` with ids equal to row numbers.
    pub fn with_sequential_ids(books: Codebooks, codes: CodeMatrix) -> Result<Self> {
        let ids = (0..codes.len() as u32).collect();
        Self::new(books, codes, ids)
    }

    pub fn books(&self) -> &Codebooks {
        &self.books
    }

    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HsqError::io(dir, e))?;
        io::write_codebooks(&dir.join(BOOKS_FILE), &self.books)?;
        io::write_codes(&dir.join(CODES_FILE), &self.codes)?;
        io::write_json(&dir.join(IDS_FILE), &self.ids)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let books = io::read_codebooks(&dir.join(BOOKS_FILE))?;
        let codes = io::read_codes(&dir.join(CODES_FILE))?.with_codewords(books.num_codewords())?;
        let ids: Vec<u32> = io::read_json(&dir.join(IDS_FILE))?;
        Self::new(books, codes, ids)
    }

    /// Top `top_n` `(id, score)` by descending AQD score, ties to the smaller id.
    pub fn search(&self, r_q: &[f64], top_n: usize) -> Result<Vec<(u32, f64)>> {
        Ok(self.search_with_cost(r_q, top_n)?.0)
    }

    pub fn search_with_cost(&self, r_q: &[f64], top_n: usize) -> Result<(Vec<(u32, f64)>, SearchCost)> {
        if top_n == 0 {
            return Err(HsqError::Validation("topN must be >= 1".into()));
        }
        if r_q.len() != self.books.dim() {
            return Err(HsqError::Validation(format!(
                "query dim {} != codebook dim {}",
                r_q.len(),
                self.books.dim()
            )));
        }
        let table = build_lookup_table(r_q, &self.books);
        let mut scored: Vec<(u32, f64)> = self
            .codes
            .rows()
            .zip(&self.ids)
            .map(|(code, &id)| (id, aqd_score(&table, code)))
            .collect();
        let take = top_n.min(scored.len());
        if take > 0 && take < scored.len() {
            scored.select_nth_unstable_by(take - 1, rank);
            scored.truncate(take);
        }
        scored.sort_by(rank);
        let cost = SearchCost {
            table_mults: self.books.num_books() * self.books.num_codewords() * self.books.dim(),
            gathers: self.codes.len() * self.codes.num_books(),
        };
        Ok((scored, cost))
    }

    /// Searches every column of `queries` (`D × Q`) in parallel.
    pub fn search_all(&self, queries: &DMatrix<f64>, top_n: usize) -> Result<Vec<Vec<(u32, f64)>>> {
        (0..queries.ncols())
            .into_par_iter()
            .map(|q| self.search(linalg::col(queries, q), top_n))
            .collect()
    }
}
