//! Flat pipeline configuration, read from TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HsqError, Result};
use crate::hypersphere_embed::TrainConfig;
use crate::quantizer::QuantConfig;
use crate::tag_semantics::SphereParams;

/// Every hyperparameter of the pipeline. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Neighbors per tag in the correlation graph.
    pub k: usize,
    pub tau: f64,
    pub epsilon: f64,
    /// Graph enhancement and merging; off gives raw tags as the sphere.
    pub use_graph: bool,
    pub normalize_mode: bool,
    pub k_neg: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub staged_mode: bool,
    pub stage_one_epochs: usize,
    pub num_books: usize,
    pub num_codewords: usize,
    pub iters: usize,
    pub icm_sweeps: usize,
    pub kmeans_iters: usize,
    pub perturb: bool,
    pub top_n: usize,
    /// MAP cutoff `R`.
    pub map_r: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let s = SphereParams::default();
        let t = TrainConfig::default();
        let q = QuantConfig::default();
        PipelineConfig {
            k: s.k,
            tau: s.tau,
            epsilon: s.epsilon,
            use_graph: s.use_graph,
            normalize_mode: t.normalize_mode,
            k_neg: t.k_neg,
            gamma: t.gamma,
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            staged_mode: t.staged_mode,
            stage_one_epochs: t.stage_one_epochs,
            num_books: q.num_books,
            num_codewords: q.num_codewords,
            iters: q.iters,
            icm_sweeps: q.icm_sweeps,
            kmeans_iters: q.kmeans_iters,
            perturb: q.perturb,
            top_n: 5000,
            map_r: 5000,
            seed: 0,
        }
    }
}

/// Seeds derived from the single configured seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub layer_init: u64,
    pub shuffle: u64,
    pub quantizer: u64,
}

impl PipelineConfig {
    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HsqError::io(path, e))?;
        let cfg: PipelineConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| HsqError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| HsqError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| HsqError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HsqError::Config(m));
        if !(-1.0..=1.0).contains(&self.tau) {
            return bad(format!("tau = {} outside [-1, 1]", self.tau));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon = {} must be > 0", self.epsilon));
        }
        if self.num_books == 0 {
            return bad("num_books must be >= 1".into());
        }
        if !(1..=256).contains(&self.num_codewords) {
            return bad(format!("num_codewords = {} outside 1..=256", self.num_codewords));
        }
        if self.icm_sweeps == 0 {
            return bad("icm_sweeps must be >= 1".into());
        }
        if self.top_n == 0 || self.map_r == 0 {
            return bad("top_n and map_r must be >= 1".into());
        }
        self.train_config().validate()
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            layer_init: self.seed,
            shuffle: self.seed.wrapping_add(1),
            quantizer: self.seed.wrapping_add(2),
        }
    }

    pub fn sphere_params(&self) -> SphereParams {
        SphereParams {
            k: self.k,
            tau: self.tau,
            epsilon: self.epsilon,
            use_graph: self.use_graph,
            normalize: self.normalize_mode,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            lambda: self.lambda,
            k_neg: self.k_neg,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            stage_one_epochs: self.stage_one_epochs,
            seed: self.seeds().shuffle,
            staged_mode: self.staged_mode,
            normalize_mode: self.normalize_mode,
        }
    }

    pub fn quant_config(&self) -> QuantConfig {
        QuantConfig {
            num_books: self.num_books,
            num_codewords: self.num_codewords,
            iters: self.iters,
            icm_sweeps: self.icm_sweeps,
            kmeans_iters: self.kmeans_iters,
            perturb: self.perturb,
            seed: self.seeds().quantizer,
        }
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        let back: PipelineConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!((c.k, c.tau, c.epsilon, c.k_neg), (20, 0.75, 0.1, 1000));
        assert_eq!(c.num_codewords, 256);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c: PipelineConfig = toml::from_str("num_books = 2\nlambda = 0.5\n").unwrap();
        assert_eq!(c.num_books, 2);
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.iters, 30);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_rejected() {
        assert!(toml::from_str::<PipelineConfig>("bogus = 1").is_err());
        let c = PipelineConfig { tau: 1.5, ..PipelineConfig::default() };
        assert!(c.validate().is_err());
        let c = PipelineConfig { num_codewords: 300, ..PipelineConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
