//! File formats. Binary payloads are little-endian float32 on disk and are
//! widened to f64 in memory; writing an object that was read reproduces the
//! file byte for byte.

mod binary;
mod jsonl;

pub use binary::{
    code_bits, code_payload_len, decode_checkpoint, decode_codebooks, decode_codes,
    decode_embeddings, encode_checkpoint, encode_codebooks, encode_codes, encode_embeddings,
    read_checkpoint, read_codebooks, read_codes, read_embeddings, write_checkpoint,
    write_codebooks, write_codes, write_embeddings, MAGIC_CHECKPOINT, MAGIC_CODEBOOKS,
    MAGIC_CODES, MAGIC_EMBEDDINGS,
};
pub use jsonl::{
    names_sidecar, read_json, read_jsonl, read_names, write_json, write_jsonl, write_names,
    LabelRecord, NameRecord, SearchResult, TagAssignment,
};
