//! Weakly-supervised hyperspherical additive quantization.
//!
//! Tag embeddings are enhanced over a correlation graph and merged into a
//! semantic sphere; image features are mapped onto the unit sphere by a
//! learned `tanh` layer; embeddings are compressed with an additive
//! quantizer learned under the sphere's second-moment metric and searched
//! with per-query lookup tables.

pub mod config;
pub mod error;
pub mod eval;
pub mod hypersphere_embed;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod quantizer;
pub mod retrieval;
pub mod synth;
pub mod tag_semantics;

pub use error::{HsqError, Result};
pub use config::PipelineConfig;
pub use hypersphere_embed::{AdamState, TrainConfig, TransformLayer};
pub use quantizer::{CodeMatrix, Codebooks, QuantConfig};
pub use retrieval::RetrievalIndex;
pub use tag_semantics::{SemanticSphere, SphereParams};
