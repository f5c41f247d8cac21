use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{MergeRemap, RefreshedTagSets};
use crate::error::{HsqError, Result};
use crate::io::{self, TagAssignment};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageTags {
    pub image: u32,
    /// Indices into the sphere columns; non-empty, ascending, no duplicates.
    pub tags: Vec<usize>,
}

/// The supervision space: merged tag embeddings (unit columns unless built
/// with `normalize = false`) and their second-moment matrix `Σ_S = S Sᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticSphere {
    vectors: DMatrix<f64>,
    covariance: DMatrix<f64>,
    image_tags: Vec<ImageTags>,
    excluded: Vec<u32>,
    normalized: bool,
}

/// Normalizes the merged columns (unless disabled) and caches `Σ_S`.
pub fn build_semantic_sphere(
    merged: &DMatrix<f64>,
    refreshed: RefreshedTagSets,
    normalize: bool,
) -> Result<SemanticSphere> {
    let mut vectors = merged.clone();
    for j in 0..vectors.ncols() {
        let c = linalg::col_mut(&mut vectors, j);
        let n = linalg::norm(c);
        if n == 0.0 || !n.is_finite() {
            return Err(HsqError::Numerical(format!(
                "merged tag {j} has zero or non-finite norm"
            )));
        }
        if normalize {
            c.iter_mut().for_each(|x| *x /= n);
        }
    }
    SemanticSphere::new(vectors, refreshed.sets, refreshed.excluded, normalize)
}

/// `Σ_i s_i s_iᵀ`, accumulated on the upper triangle and mirrored.
fn second_moment(vectors: &DMatrix<f64>) -> DMatrix<f64> {
    let d = vectors.nrows();
    let mut cov = DMatrix::zeros(d, d);
    for j in 0..vectors.ncols() {
        let s = linalg::col(vectors, j);
        for b in 0..d {
            for a in 0..=b {
                cov[(a, b)] += s[a] * s[b];
            }
        }
    }
    for b in 0..d {
        for a in 0..b {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov
}

#[derive(Serialize, Deserialize)]
struct SphereMeta {
    dim: usize,
    tags: usize,
    normalized: bool,
    excluded_images: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    remap: Option<Vec<usize>>,
}

impl SemanticSphere {
    pub fn new(
        vectors: DMatrix<f64>,
        image_tags: Vec<ImageTags>,
        excluded: Vec<u32>,
        normalized: bool,
    ) -> Result<Self> {
        let n = vectors.ncols();
        if n == 0 {
            return Err(HsqError::Validation("semantic sphere has no tags".into()));
        }
        for it in &image_tags {
            if it.tags.is_empty() {
                return Err(HsqError::Validation(format!("image {} has no tags", it.image)));
            }
            if it.tags.windows(2).any(|w| w[0] >= w[1]) {
                return Err(HsqError::Validation(format!(
                    "image {} tag set is not strictly ascending",
                    it.image
                )));
            }
            if let Some(&bad) = it.tags.iter().find(|&&t| t >= n) {
                return Err(HsqError::Validation(format!(
                    "image {} references tag {} of {}",
                    it.image, bad, n
                )));
            }
        }
        let covariance = second_moment(&vectors);
        Ok(SemanticSphere { vectors, covariance, image_tags, excluded, normalized })
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

    /// `Σ_S`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn image_tags(&self) -> &[ImageTags] {
        &self.image_tags
    }

    pub fn tags_of(&self, image: u32) -> Option<&[usize]> {
        self.image_tags
            .iter()
            .find(|it| it.image == image)
            .map(|it| it.tags.as_slice())
    }

    pub fn excluded(&self) -> &[u32] {
        &self.excluded
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Writes `sphere.hsqv`, `tag_sets.jsonl` and `sphere.json` into `dir`.
    pub fn save(&self, dir: &Path, remap: Option<&MergeRemap>) -> Result<()> {
        io::write_embeddings(&dir.join("sphere.hsqv"), &self.vectors)?;
        let sets: Vec<TagAssignment> = self
            .image_tags
            .iter()
            .map(|it| TagAssignment {
                image: it.image,
                tags: it.tags.iter().map(|&t| t as u32).collect(),
            })
            .collect();
        io::write_jsonl(&dir.join("tag_sets.jsonl"), &sets)?;
        let meta = SphereMeta {
            dim: self.dim(),
            tags: self.len(),
            normalized: self.normalized,
            excluded_images: self.excluded.clone(),
            remap: remap.map(|r| r.old_to_new().to_vec()),
        };
        io::write_json(&dir.join("sphere.json"), &meta)
    }

    /// Loads a sphere directory. `Σ_S` is recomputed from the stored columns.
    pub fn load(dir: &Path) -> Result<Self> {
        let vectors = io::read_embeddings(&dir.join("sphere.hsqv"))?;
        let meta: SphereMeta = io::read_json(&dir.join("sphere.json"))?;
        if meta.dim != vectors.nrows() || meta.tags != vectors.ncols() {
            return Err(HsqError::format(
                dir.join("sphere.json"),
                format!(
                    "shape mismatch: metadata says {}×{}, sphere.hsqv holds {}×{}",
                    meta.dim,
                    meta.tags,
                    vectors.nrows(),
                    vectors.ncols()
                ),
            ));
        }
        let sets: Vec<TagAssignment> = io::read_jsonl(&dir.join("tag_sets.jsonl"))?;
        let image_tags = sets
            .into_iter()
            .map(|a| ImageTags { image: a.image, tags: a.tags.into_iter().map(|t| t as usize).collect() })
            .collect();
        SemanticSphere::new(vectors, image_tags, meta.excluded_images, meta.normalized)
    }
}
