//! Little-endian binary containers: HSQV1 embeddings, HSQW1 checkpoints,
//! HSQC1 codebooks and HSQB1 codes.
//!
//! Every reader checks the magic, the declared shape and the exact payload
//! length; errors carry the byte offset where validation failed.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{HsqError, Result};
use crate::hypersphere_embed::{AdamState, TransformLayer};
use crate::quantizer::{CodeMatrix, Codebooks};

pub const MAGIC_EMBEDDINGS: &[u8; 5] = b"HSQV1";
pub const MAGIC_CHECKPOINT: &[u8; 5] = b"HSQW1";
pub const MAGIC_CODEBOOKS: &[u8; 5] = b"HSQC1";
pub const MAGIC_CODES: &[u8; 5] = b"HSQB1";

/// Cursor over a file's bytes that reports offsets in its errors.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(HsqError::format(
                self.path,
                format!(
                    "truncated payload at offset {}: need {} more bytes, {} available",
                    self.pos,
                    n,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 5]) -> Result<()> {
        let got = self.take(5)?;
        if got != expected {
            return Err(HsqError::format(
                self.path,
                format!(
                    "unknown magic {:?} at offset 0, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    /// Checks that exactly `n` bytes remain, before any payload is decoded.
    fn expect_remaining(&self, n: usize) -> Result<()> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(HsqError::format(
                self.path,
                format!(
                    "truncated payload at offset {}: declared shape needs {} bytes, {} available",
                    self.bytes.len(),
                    n,
                    left
                ),
            ));
        }
        if left > n {
            return Err(HsqError::format(
                self.path,
                format!(
                    "shape mismatch: {} trailing bytes at offset {}",
                    left - n,
                    self.pos + n
                ),
            ));
        }
        Ok(())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(n * 4)?;
        let mut out = Vec::with_capacity(n);
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            if !x.is_finite() {
                return Err(HsqError::format(
                    self.path,
                    format!("non-finite value at offset {}", start + 4 * i),
                ));
            }
            out.push(x as f64);
        }
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| HsqError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| HsqError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| HsqError::io(path, e))
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v)
        .map_err(|_| HsqError::Validation(format!("{what} = {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s<'a>(out: &mut Vec<u8>, xs: impl IntoIterator<Item = &'a f64>) {
    for &x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

// ---------------------------------------------------------------------------
// HSQV1

/// Encodes the columns of a `dim × count` matrix as HSQV1 records.
pub fn encode_embeddings(vectors: &DMatrix<f64>) -> Result<Vec<u8>> {
    let (dim, count) = vectors.shape();
    let mut out = Vec::with_capacity(13 + 4 * dim * count);
    out.extend_from_slice(MAGIC_EMBEDDINGS);
    put_u32(&mut out, count, "record count")?;
    put_u32(&mut out, dim, "dimension")?;
    // column-major storage: each column is one record
    put_f32s(&mut out, vectors.as_slice());
    Ok(out)
}

pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<DMatrix<f64>> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC_EMBEDDINGS)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(HsqError::format(path, "malformed header: dimension 0 at offset 9"));
    }
    let left = bytes.len() - r.pos;
    if left < count * dim * 4 && left.is_multiple_of(4) {
        let values = left / 4;
        return Err(HsqError::format(
            path,
            format!(
                "dimension mismatch: record {} has {} of {} values (truncated payload at offset {})",
                values / dim,
                values % dim,
                dim,
                bytes.len()
            ),
        ));
    }
    r.expect_remaining(count * dim * 4)?;
    let data = r.f32s(count * dim)?;
    Ok(DMatrix::from_vec(dim, count, data))
}

/// Writes embeddings (one column per record).
pub fn write_embeddings(path: &Path, vectors: &DMatrix<f64>) -> Result<()> {
    write_file(path, &encode_embeddings(vectors)?)
}

/// Reads an HSQV1 file into a `dim × count` matrix.
pub fn read_embeddings(path: &Path) -> Result<DMatrix<f64>> {
    decode_embeddings(path, &read_file(path)?)
}

// ---------------------------------------------------------------------------
// HSQW1

pub fn encode_checkpoint(layer: &TransformLayer, adam: &AdamState) -> Result<Vec<u8>> {
    let (d, v) = layer.weights().shape();
    if adam.first.shape() != (d, v) || adam.second.shape() != (d, v) {
        return Err(HsqError::Validation(
            "optimizer moments do not match layer shape".into(),
        ));
    }
    let mut out = Vec::with_capacity(13 + 12 * d * v);
    out.extend_from_slice(MAGIC_CHECKPOINT);
    put_u32(&mut out, d, "semantic dim")?;
    put_u32(&mut out, v, "feature dim")?;
    for m in [layer.weights(), &adam.first, &adam.second] {
        // row-major on disk
        for i in 0..d {
            for j in 0..v {
                out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<(TransformLayer, AdamState)> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC_CHECKPOINT)?;
    let d = r.u32()? as usize;
    let v = r.u32()? as usize;
    if d == 0 || v == 0 {
        return Err(HsqError::format(path, "malformed header: zero dimension"));
    }
    r.expect_remaining(3 * d * v * 4)?;
    let mut mats = Vec::with_capacity(3);
    for _ in 0..3 {
        let vals = r.f32s(d * v)?;
        mats.push(DMatrix::from_row_slice(d, v, &vals));
    }
    let second = mats.pop().unwrap();
    let first = mats.pop().unwrap();
    let weights = mats.pop().unwrap();
    Ok((TransformLayer::from_weights(weights), AdamState { first, second, step: 0 }))
}

/// Writes the layer weights followed by the two Adam moment matrices.
pub fn write_checkpoint(path: &Path, layer: &TransformLayer, adam: &AdamState) -> Result<()> {
    write_file(path, &encode_checkpoint(layer, adam)?)
}

/// The Adam step counter is not part of the format; it restarts at 0.
pub fn read_checkpoint(path: &Path) -> Result<(TransformLayer, AdamState)> {
    decode_checkpoint(path, &read_file(path)?)
}

// ---------------------------------------------------------------------------
// HSQC1

pub fn encode_codebooks(books: &Codebooks) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(17 + 4 * books.as_slice().len());
    out.extend_from_slice(MAGIC_CODEBOOKS);
    put_u32(&mut out, books.num_books(), "M")?;
    put_u32(&mut out, books.num_codewords(), "K")?;
    put_u32(&mut out, books.dim(), "D")?;
    put_f32s(&mut out, books.as_slice());
    Ok(out)
}

pub fn decode_codebooks(path: &Path, bytes: &[u8]) -> Result<Codebooks> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC_CODEBOOKS)?;
    let m = r.u32()? as usize;
    let k = r.u32()? as usize;
    let d = r.u32()? as usize;
    if m == 0 || k == 0 || d == 0 {
        return Err(HsqError::format(path, "malformed header: zero-sized codebooks"));
    }
    r.expect_remaining(m * k * d * 4)?;
    let data = r.f32s(m * k * d)?;
    Codebooks::from_flat(m, k, d, data)
}

pub fn write_codebooks(path: &Path, books: &Codebooks) -> Result<()> {
    write_file(path, &encode_codebooks(books)?)
}

pub fn read_codebooks(path: &Path) -> Result<Codebooks> {
    decode_codebooks(path, &read_file(path)?)
}

// ---------------------------------------------------------------------------
// HSQB1

/// Bits per subcode: ceil(log2 K), 0 when K = 1.
pub fn code_bits(k: usize) -> u8 {
    let mut bits = 0u8;
    while (1usize << bits) < k {
        bits += 1;
    }
    bits
}

/// Byte length of the code payload for `n` points.
pub fn code_payload_len(n: usize, m: usize, bits: u8) -> usize {
    if bits == 8 {
        n * m
    } else {
        (n * m * bits as usize).div_ceil(8)
    }
}

pub fn encode_codes(codes: &CodeMatrix) -> Result<Vec<u8>> {
    let bits = code_bits(codes.num_codewords());
    let (n, m) = (codes.len(), codes.num_books());
    let mut out = Vec::with_capacity(14 + code_payload_len(n, m, bits));
    out.extend_from_slice(MAGIC_CODES);
    put_u32(&mut out, n, "N")?;
    put_u32(&mut out, m, "M")?;
    out.push(bits);
    if bits == 8 {
        out.extend_from_slice(codes.as_slice());
    } else {
        // LSB-first bit stream over the row-major code sequence
        let mut packed = vec![0u8; code_payload_len(n, m, bits)];
        let mut pos = 0usize;
        for &c in codes.as_slice() {
            for b in 0..bits as usize {
                if (c >> b) & 1 == 1 {
                    packed[pos / 8] |= 1 << (pos % 8);
                }
                pos += 1;
            }
        }
        out.extend_from_slice(&packed);
    }
    Ok(out)
}

/// Decodes codes. The codeword count is taken as `2^log2K`; callers that know
/// the real `K` should run [`CodeMatrix::validate_against`].
pub fn decode_codes(path: &Path, bytes: &[u8]) -> Result<CodeMatrix> {
    let mut r = Reader::new(path, bytes);
    r.magic(MAGIC_CODES)?;
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    let bits = r.u8()?;
    if bits > 8 {
        return Err(HsqError::format(
            path,
            format!("malformed header: log2K = {bits} at offset 13 exceeds one-byte subcodes"),
        ));
    }
    if m == 0 {
        return Err(HsqError::format(path, "malformed header: M = 0 at offset 9"));
    }
    let len = code_payload_len(n, m, bits);
    r.expect_remaining(len)?;
    let payload = r.take(len)?;
    let data = if bits == 8 {
        payload.to_vec()
    } else {
        let mut data = Vec::with_capacity(n * m);
        let mut pos = 0usize;
        for _ in 0..n * m {
            let mut c = 0u8;
            for b in 0..bits as usize {
                if (payload[pos / 8] >> (pos % 8)) & 1 == 1 {
                    c |= 1 << b;
                }
                pos += 1;
            }
            data.push(c);
        }
        data
    };
    CodeMatrix::from_flat(n, m, 1usize << bits, data)
}

pub fn write_codes(path: &Path, codes: &CodeMatrix) -> Result<()> {
    write_file(path, &encode_codes(codes)?)
}

pub fn read_codes(path: &Path) -> Result<CodeMatrix> {
    decode_codes(path, &read_file(path)?)
}
