//! End-to-end run: sphere → alternating training → index → search → eval,
//! with a provenance manifest next to the outputs.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, Seeds};
use crate::error::{HsqError, Result};
use crate::eval::{evaluate, GroundTruth, MetricReport};
use crate::hypersphere_embed::{AdamState, TrainingSet, TransformLayer};
use crate::io::{self, LabelRecord, SearchResult, TagAssignment};
use crate::quantizer::{alternate_optimize, AlternationResult, IterationReport, PhaseSummary};
use crate::retrieval::RetrievalIndex;
use crate::synth;
use crate::tag_semantics::{build_sphere, load_tag_embeddings, MergeRemap, SemanticSphere, SphereParams};

pub const CONFIG_FILE: &str = "config.toml";
pub const SPHERE_DIR: &str = "sphere";
pub const MODEL_FILE: &str = "model.hsqw";
pub const INDEX_DIR: &str = "index";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "history.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Input files of a pipeline run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineInputs {
    pub tags: PathBuf,
    pub assignments: PathBuf,
    pub features: PathBuf,
    pub queries: PathBuf,
    pub labels: PathBuf,
    /// Image id of the first query record.
    pub query_id_offset: u32,
}

impl PipelineInputs {
    /// Inputs laid out by the synthetic generator.
    pub fn from_synth_dir(dir: &Path) -> Result<Self> {
        let info: synth::DatasetInfo = io::read_json(&dir.join(synth::DATASET_FILE))?;
        Ok(PipelineInputs {
            tags: dir.join(synth::TAGS_FILE),
            assignments: dir.join(synth::ASSIGNMENTS_FILE),
            features: dir.join(synth::FEATURES_FILE),
            queries: dir.join(synth::QUERIES_FILE),
            labels: dir.join(synth::LABELS_FILE),
            query_id_offset: info.query_id_offset,
        })
    }

    fn files(&self) -> [(&'static str, &Path); 5] {
        [
            ("tags", &self.tags),
            ("assignments", &self.assignments),
            ("features", &self.features),
            ("queries", &self.queries),
            ("labels", &self.labels),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub name: String,
    pub sha256: String,
}

/// Provenance record; contains no timestamps so reruns are identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub phases: Vec<PhaseSummary>,
    pub stages: Vec<String>,
    pub inputs: Vec<InputDigest>,
    pub sphere_tags: usize,
    pub excluded_images: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: MetricReport,
    pub manifest: Manifest,
    pub history: Vec<IterationReport>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| HsqError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Loads tags and assignments and builds the sphere.
pub fn sphere_from_files(
    tags: &Path,
    assignments: &Path,
    params: &SphereParams,
) -> Result<(SemanticSphere, MergeRemap)> {
    let tags = load_tag_embeddings(tags)?;
    let assignments: Vec<TagAssignment> = io::read_jsonl(assignments)?;
    build_sphere(&tags, &assignments, params)
}

/// Fresh layer plus full alternating optimization.
pub fn train_model(
    features: DMatrix<f64>,
    sphere: &SemanticSphere,
    cfg: &PipelineConfig,
) -> Result<AlternationResult> {
    let data = TrainingSet::new(features, sphere)?;
    let layer = TransformLayer::init(sphere.dim(), data.feature_dim(), cfg.seeds().layer_init)
        .with_normalize(cfg.normalize_mode);
    let adam = AdamState::for_layer(&layer);
    alternate_optimize(&data, layer, adam, sphere, &cfg.train_config(), &cfg.quant_config())
}

/// Searches embedded queries; query `j` gets id `offset + j`.
pub fn search_embedded(
    index: &RetrievalIndex,
    queries: &DMatrix<f64>,
    offset: u32,
    top_n: usize,
) -> Result<Vec<SearchResult>> {
    let ranked = index.search_all(queries, top_n)?;
    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(j, results)| SearchResult { query: offset + j as u32, results })
        .collect())
}

/// Runs every stage and writes all artifacts under `out`.
pub fn run_pipeline(inputs: &PipelineInputs, cfg: &PipelineConfig, out: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| HsqError::io(out, e))?;
    cfg.save(&out.join(CONFIG_FILE))?;
    let mut stages = Vec::new();

    let (sphere, remap) = sphere_from_files(&inputs.tags, &inputs.assignments, &cfg.sphere_params())
        .map_err(|e| e.in_stage("build-sphere"))?;
    sphere.save(&out.join(SPHERE_DIR), Some(&remap)).map_err(|e| e.in_stage("build-sphere"))?;
    log::info!("sphere: {} tags from {} raw, {} images excluded", sphere.len(), remap.old_count(), sphere.excluded().len());
    stages.push("build-sphere".to_string());

    let trained = (|| {
        let features = io::read_embeddings(&inputs.features)?;
        let res = train_model(features, &sphere, cfg)?;
        io::write_checkpoint(&out.join(MODEL_FILE), &res.layer, &res.adam)?;
        io::write_json(&out.join(HISTORY_FILE), &res.history)?;
        Ok(res)
    })()
    .map_err(|e: HsqError| e.in_stage("train"))?;
    stages.push("train".to_string());

    let index = RetrievalIndex::with_sequential_ids(trained.books.clone(), trained.codes.clone())
        .and_then(|idx| idx.save(&out.join(INDEX_DIR)).map(|_| idx))
        .map_err(|e| e.in_stage("quantize"))?;
    stages.push("quantize".to_string());

    let results = (|| {
        let q = io::read_embeddings(&inputs.queries)?;
        let r = trained.layer.embed_all(&q)?;
        let results = search_embedded(&index, &r, inputs.query_id_offset, cfg.top_n)?;
        io::write_jsonl(&out.join(RESULTS_FILE), &results)?;
        Ok(results)
    })()
    .map_err(|e: HsqError| e.in_stage("search"))?;
    stages.push("search".to_string());

    let report = (|| {
        let labels: Vec<LabelRecord> = io::read_jsonl(&inputs.labels)?;
        let gt = GroundTruth::from_records(&labels);
        let report = evaluate(&results, &gt, index.ids(), cfg.map_r);
        io::write_json(&out.join(REPORT_FILE), &report)?;
        Ok(report)
    })()
    .map_err(|e: HsqError| e.in_stage("eval"))?;
    stages.push("eval".to_string());

    let mut digests = Vec::new();
    for (name, path) in inputs.files() {
        digests.push(InputDigest { name: name.to_string(), sha256: sha256_file(path)? });
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds(),
        phases: trained.phases.clone(),
        stages,
        inputs: digests,
        sphere_tags: sphere.len(),
        excluded_images: sphere.excluded().len(),
    };
    io::write_json(&out.join(MANIFEST_FILE), &manifest)?;
    log::info!("MAP@{} = {:.4} over {} queries", cfg.map_r, report.map, report.queries);
    Ok(PipelineOutcome { report, manifest, history: trained.history })
}
