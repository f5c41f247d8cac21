//! Seeded synthetic corpus: clustered tag embeddings, image features that
//! are linear images of the cluster prototypes plus nuisance and noise,
//! tag assignments and cluster labels.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HsqError, Result};
use crate::io::{self, LabelRecord, TagAssignment};

pub const TAGS_FILE: &str = "tags.hsqv";
pub const FEATURES_FILE: &str = "features.hsqv";
pub const QUERIES_FILE: &str = "queries.hsqv";
pub const ASSIGNMENTS_FILE: &str = "assignments.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Number of semantic clusters `G`.
    pub clusters: usize,
    /// Database images per cluster.
    pub per_cluster: usize,
    pub queries_per_cluster: usize,
    /// Tag embedding dimension `D`.
    pub tag_dim: usize,
    /// Image feature dimension `V`.
    pub feature_dim: usize,
    pub tags_per_cluster: usize,
    /// Norm of the jitter added to the prototype for each cluster tag.
    pub tag_jitter: f64,
    /// Adds a near-duplicate of every tag.
    pub synonyms: bool,
    /// Each image gets between 1 and this many distinct cluster tags.
    pub max_tags: usize,
    /// Chance that an image also carries one tag from another cluster.
    pub noise_tag_prob: f64,
    /// Scale of the nuisance and isotropic feature noise; 0 is noiseless.
    pub noise: f64,
    /// Rank of the nuisance subspace shared by all clusters.
    pub nuisance_rank: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            clusters: 4,
            per_cluster: 50,
            queries_per_cluster: 10,
            tag_dim: 16,
            feature_dim: 32,
            tags_per_cluster: 3,
            tag_jitter: 0.3,
            synonyms: false,
            max_tags: 2,
            noise_tag_prob: 0.0,
            noise: 0.5,
            nuisance_rank: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HsqError::Validation(format!("invalid synth spec: {m}")));
        if self.clusters == 0 || self.per_cluster == 0 {
            return bad("clusters and per_cluster must be >= 1");
        }
        if self.tag_dim < self.clusters {
            return bad("tag_dim must be >= clusters for orthogonal prototypes");
        }
        if self.feature_dim == 0 || self.tags_per_cluster == 0 || self.max_tags == 0 {
            return bad("feature_dim, tags_per_cluster and max_tags must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.noise_tag_prob) {
            return bad("noise_tag_prob must lie in [0, 1]");
        }
        if !(self.noise >= 0.0) || !(self.tag_jitter >= 0.0) {
            return bad("noise and tag_jitter must be >= 0");
        }
        if self.noise_tag_prob > 0.0 && self.clusters < 2 {
            return bad("noise tags need at least two clusters");
        }
        Ok(())
    }

    pub fn database_size(&self) -> usize {
        self.clusters * self.per_cluster
    }

    pub fn query_count(&self) -> usize {
        self.clusters * self.queries_per_cluster
    }

    fn tags_in_cluster(&self) -> usize {
        self.tags_per_cluster * if self.synonyms { 2 } else { 1 }
    }
}

/// Generated corpus. Database images have ids `0..N`, queries `N..N+Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub spec: SynthSpec,
    /// Cluster prototypes, `D × G` with orthonormal columns.
    pub prototypes: DMatrix<f64>,
    pub tags: DMatrix<f64>,
    pub tag_names: Vec<String>,
    /// Cluster of every tag column.
    pub tag_clusters: Vec<usize>,
    /// Database features, `V × N`.
    pub features: DMatrix<f64>,
    /// Query features, `V × Q`.
    pub queries: DMatrix<f64>,
    pub assignments: Vec<TagAssignment>,
    /// Labels of database images followed by queries.
    pub labels: Vec<LabelRecord>,
    /// Linear map from prototype space to feature space, `V × D`.
    pub feature_map: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub spec: SynthSpec,
    pub database_size: usize,
    pub query_count: usize,
    pub query_id_offset: u32,
    pub tag_count: usize,
}

fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn normalize_columns(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let n = m.column(j).norm();
        if n > 0.0 {
            m.column_mut(j).apply(|x| *x /= n);
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (g, d, v) = (spec.clusters, spec.tag_dim, spec.feature_dim);

    let prototypes = gaussian(d, g, 1.0, &mut rng).qr().q();

    let per = spec.tags_in_cluster();
    let mut tags = DMatrix::zeros(d, g * per);
    let mut tag_names = Vec::with_capacity(g * per);
    let mut tag_clusters = Vec::with_capacity(g * per);
    let jitter_sd = spec.tag_jitter / (d as f64).sqrt();
    for c in 0..g {
        for s in 0..spec.tags_per_cluster {
            let base: Vec<f64> = (0..d)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    prototypes[(i, c)] + jitter_sd * z
                })
                .collect();
            let col = tag_names.len();
            tags.column_mut(col).copy_from_slice(&base);
            tag_names.push(format!("c{c}_t{s}"));
            tag_clusters.push(c);
            if spec.synonyms {
                let col = tag_names.len();
                for i in 0..d {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    tags[(i, col)] = base[i] + 0.01 * z / (d as f64).sqrt();
                }
                tag_names.push(format!("c{c}_t{s}_syn"));
                tag_clusters.push(c);
            }
        }
    }
    normalize_columns(&mut tags);

    let feature_map = gaussian(v, d, 1.0, &mut rng);
    let nuisance = gaussian(v, spec.nuisance_rank, 1.0 / (spec.nuisance_rank.max(1) as f64).sqrt(), &mut rng);
    let signal = &feature_map * &prototypes; // V × G

    let draw_features = |count: usize, rng: &mut ChaCha8Rng| {
        let mut f = DMatrix::zeros(v, count * g);
        for c in 0..g {
            for i in 0..count {
                let col = c * count + i;
                f.column_mut(col).copy_from(&signal.column(c));
                if spec.noise > 0.0 {
                    let z = gaussian(spec.nuisance_rank, 1, 1.0, rng);
                    let e = gaussian(v, 1, 1.0, rng);
                    let noise = &nuisance * z + e;
                    f.column_mut(col).axpy(spec.noise, &noise.column(0), 1.0);
                }
            }
        }
        f
    };
    let features = draw_features(spec.per_cluster, &mut rng);
    let queries = draw_features(spec.queries_per_cluster, &mut rng);

    let mut assignments = Vec::with_capacity(spec.database_size());
    for c in 0..g {
        for i in 0..spec.per_cluster {
            let image = (c * spec.per_cluster + i) as u32;
            let n = rng.random_range(1..=spec.max_tags.min(per));
            let mut t: Vec<u32> =
                sample(&mut rng, per, n).into_iter().map(|s| (c * per + s) as u32).collect();
            if spec.noise_tag_prob > 0.0 && rng.random::<f64>() < spec.noise_tag_prob {
                let other = (c + rng.random_range(1..g)) % g;
                t.push((other * per + rng.random_range(0..per)) as u32);
            }
            t.sort_unstable();
            assignments.push(TagAssignment { image, tags: t });
        }
    }

    let n_db = spec.database_size();
    let mut labels = Vec::with_capacity(n_db + spec.query_count());
    for c in 0..g {
        for i in 0..spec.per_cluster {
            labels.push(LabelRecord { image: (c * spec.per_cluster + i) as u32, labels: vec![c as u32] });
        }
    }
    for c in 0..g {
        for i in 0..spec.queries_per_cluster {
            let image = (n_db + c * spec.queries_per_cluster + i) as u32;
            labels.push(LabelRecord { image, labels: vec![c as u32] });
        }
    }

    Ok(SynthDataset {
        spec: spec.clone(),
        prototypes,
        tags,
        tag_names,
        tag_clusters,
        features,
        queries,
        assignments,
        labels,
        feature_map,
    })
}

impl SynthDataset {
    pub fn query_id_offset(&self) -> u32 {
        self.spec.database_size() as u32
    }

    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            spec: self.spec.clone(),
            database_size: self.spec.database_size(),
            query_count: self.spec.query_count(),
            query_id_offset: self.query_id_offset(),
            tag_count: self.tags.ncols(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HsqError::io(dir, e))?;
        let tags_path = dir.join(TAGS_FILE);
        io::write_embeddings(&tags_path, &self.tags)?;
        io::write_names(&tags_path, &self.tag_names)?;
        io::write_embeddings(&dir.join(FEATURES_FILE), &self.features)?;
        io::write_embeddings(&dir.join(QUERIES_FILE), &self.queries)?;
        io::write_jsonl(&dir.join(ASSIGNMENTS_FILE), &self.assignments)?;
        io::write_jsonl(&dir.join(LABELS_FILE), &self.labels)?;
        io::write_json(&dir.join(DATASET_FILE), &self.info())
    }
}
