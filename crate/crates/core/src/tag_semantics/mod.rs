//! Tag supervision: correlation graph over tag embeddings, one-hop semantic
//! enhancement, single-pass merging of near-duplicate tags, and the unit
//! semantic sphere that supervises training.

mod graph;
mod merge;
mod sphere;

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{HsqError, Result};
use crate::io::{self, TagAssignment};
use crate::linalg;

pub use graph::{build_correlation_graph, enhance, CorrelationGraph};
pub use merge::{merge_sparse_tags, MergeRemap};
pub use sphere::{build_semantic_sphere, ImageTags, SemanticSphere};

/// Raw tag embeddings, one column per tag. Tag ids are the column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TagEmbeddingMatrix {
    vectors: DMatrix<f64>,
    names: Option<Vec<String>>,
}

impl TagEmbeddingMatrix {
    pub fn new(vectors: DMatrix<f64>) -> Result<Self> {
        Self::with_names(vectors, None)
    }

    pub fn with_names(vectors: DMatrix<f64>, names: Option<Vec<String>>) -> Result<Self> {
        if vectors.nrows() == 0 || vectors.ncols() == 0 {
            return Err(HsqError::Validation("tag embedding matrix is empty".into()));
        }
        if let Some(n) = &names {
            if n.len() != vectors.ncols() {
                return Err(HsqError::Validation(format!(
                    "{} names for {} tags",
                    n.len(),
                    vectors.ncols()
                )));
            }
        }
        for j in 0..vectors.ncols() {
            if linalg::norm(linalg::col(&vectors, j)) == 0.0 {
                let label = names
                    .as_ref()
                    .map(|n| format!(" ({})", n[j]))
                    .unwrap_or_default();
                return Err(HsqError::Validation(format!(
                    "zero-norm embedding at record {j}{label}"
                )));
            }
        }
        Ok(TagEmbeddingMatrix { vectors, names })
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn column(&self, j: usize) -> &[f64] {
        linalg::col(&self.vectors, j)
    }

    pub fn names(&self) -> Option<&[String]> {
        self.names.as_deref()
    }

    /// Vocabulary lookup: tag id to column index.
    pub fn column_of(&self, tag: u32) -> Option<usize> {
        let j = tag as usize;
        (j < self.len()).then_some(j)
    }
}

/// Loads HSQV1 tag embeddings plus the optional name sidecar.
pub fn load_tag_embeddings(path: &Path) -> Result<TagEmbeddingMatrix> {
    let vectors = io::read_embeddings(path)?;
    let names = io::read_names(path, vectors.ncols())?;
    TagEmbeddingMatrix::with_names(vectors, names).map_err(|e| match e {
        HsqError::Validation(msg) => HsqError::format(path, msg),
        other => other,
    })
}

/// Graph and merge parameters for sphere construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereParams {
    pub k: usize,
    pub tau: f64,
    pub epsilon: f64,
    /// When false, skip the graph, enhancement and merging.
    pub use_graph: bool,
    /// When false, tag vectors are kept at their raw norms.
    pub normalize: bool,
}

impl Default for SphereParams {
    fn default() -> Self {
        SphereParams { k: 20, tau: 0.75, epsilon: 0.1, use_graph: true, normalize: true }
    }
}

/// Per-image tag index sets after remapping through the merge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefreshedTagSets {
    pub sets: Vec<ImageTags>,
    /// Images whose refreshed set is empty; not used for training.
    pub excluded: Vec<u32>,
}

/// Maps each image's tags through `remap` and deduplicates (ascending order).
pub fn refresh_image_tag_sets(
    assignments: &[TagAssignment],
    remap: &MergeRemap,
) -> Result<RefreshedTagSets> {
    let mut sets = Vec::with_capacity(assignments.len());
    let mut excluded = Vec::new();
    for a in assignments {
        let mut tags = Vec::with_capacity(a.tags.len());
        for &t in &a.tags {
            let new = remap.map(t as usize).ok_or_else(|| {
                HsqError::Validation(format!("image {}: unknown tag id {}", a.image, t))
            })?;
            tags.push(new);
        }
        tags.sort_unstable();
        tags.dedup();
        if tags.is_empty() {
            log::warn!("image {} has an empty tag set and is excluded from training", a.image);
            excluded.push(a.image);
        } else {
            sets.push(ImageTags { image: a.image, tags });
        }
    }
    Ok(RefreshedTagSets { sets, excluded })
}

/// Runs graph → enhancement → merge → refresh → sphere.
pub fn build_sphere(
    tags: &TagEmbeddingMatrix,
    assignments: &[TagAssignment],
    params: &SphereParams,
) -> Result<(SemanticSphere, MergeRemap)> {
    if !(-1.0..=1.0).contains(&params.tau) {
        return Err(HsqError::Config(format!("tau = {} outside [-1, 1]", params.tau)));
    }
    if params.epsilon.is_nan() || params.epsilon <= 0.0 {
        return Err(HsqError::Config(format!("epsilon = {} must be > 0", params.epsilon)));
    }
    let remap = if params.use_graph {
        let graph = build_correlation_graph(tags, params.k, params.tau);
        let enhanced = enhance(tags, &graph);
        merge_sparse_tags(&enhanced, params.epsilon)
    } else {
        MergeRemap::identity(tags.vectors().clone())
    };
    let refreshed = refresh_image_tag_sets(assignments, &remap)?;
    let sphere = build_semantic_sphere(remap.merged(), refreshed, params.normalize)?;
    Ok((sphere, remap))
}
