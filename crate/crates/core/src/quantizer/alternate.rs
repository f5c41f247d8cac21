use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    diag_covariance, encode_all, init_codebooks, quantization_objective, update_codebooks,
    CodeMatrix, Codebooks, PerturbationSchedule, QuantConfig,
};
use crate::error::{HsqError, Result};
use crate::hypersphere_embed::{
    batch_objective, train_epoch, AdamState, Phase, QuantTargets, TrainConfig, TrainingSet,
    TransformLayer,
};
use crate::tag_semantics::SemanticSphere;

/// Objective values after one outer alternation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// `Σ_n L_n` over the supervised images.
    pub margin: f64,
    /// `Σ_n Q_n` over the supervised images.
    pub quant: f64,
    /// Objective (1): `margin + λ·quant`.
    pub objective: f64,
    /// Objective (3): `Σ_S`-weighted reconstruction error over all images.
    pub quant_objective: f64,
}

/// A block of W updates run under one phase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: Phase,
    pub epochs: usize,
}

#[derive(Debug, Clone)]
pub struct AlternationResult {
    pub layer: TransformLayer,
    pub adam: AdamState,
    pub books: Codebooks,
    pub codes: CodeMatrix,
    /// Final database embeddings (`D × N`).
    pub embeddings: DMatrix<f64>,
    pub history: Vec<IterationReport>,
    pub phases: Vec<PhaseSummary>,
}

fn check(qcfg: &QuantConfig, n: usize) -> Result<()> {
    if qcfg.num_books == 0 {
        return Err(HsqError::Config("M must be >= 1".into()));
    }
    if qcfg.num_codewords < 1 || qcfg.num_codewords > 256 {
        return Err(HsqError::Config(format!(
            "K = {} not supported (1 ≤ K ≤ 256)",
            qcfg.num_codewords
        )));
    }
    if n < qcfg.num_codewords {
        return Err(HsqError::Validation(format!(
            "{n} database points is fewer than K = {}",
            qcfg.num_codewords
        )));
    }
    Ok(())
}

/// One B update (ICM against possibly perturbed codebooks, warm-started)
/// followed by the closed-form C update.
fn quantizer_step(
    r: &DMatrix<f64>,
    books: &Codebooks,
    codes: &CodeMatrix,
    sphere: &SemanticSphere,
    qcfg: &QuantConfig,
    iter: usize,
) -> Result<(Codebooks, CodeMatrix)> {
    let encode_books = if qcfg.perturb {
        PerturbationSchedule::new(qcfg.iters, diag_covariance(r), qcfg.seed).perturb(books, iter)
    } else {
        books.clone()
    };
    let codes = encode_all(r, &encode_books, sphere.covariance(), qcfg.icm_sweeps, Some(codes));
    let books = update_codebooks(r, &codes)?;
    Ok((books, codes))
}

/// Alternates W (Adam epochs), B (ICM) and C (closed form) for
/// `qcfg.iters` rounds, with an optional margin-only stage first. Final codes
/// come from a clean ICM pass against the final codebooks.
pub fn alternate_optimize(
    data: &TrainingSet,
    mut layer: TransformLayer,
    mut adam: AdamState,
    sphere: &SemanticSphere,
    cfg: &TrainConfig,
    qcfg: &QuantConfig,
) -> Result<AlternationResult> {
    cfg.validate()?;
    check(qcfg, data.features.ncols())?;
    let sigma = sphere.covariance();
    let all: Vec<usize> = (0..data.len()).collect();
    let mut phases = Vec::new();
    let mut epoch = 0u64;

    if cfg.staged_mode {
        for _ in 0..cfg.stage_one_epochs {
            let rep =
                train_epoch(data, &mut layer, &mut adam, sphere, None, cfg, Phase::Embedding, epoch)?;
            log::debug!("stage one epoch {epoch}: margin {:.6}", rep.margin);
            epoch += 1;
        }
        phases.push(PhaseSummary { phase: Phase::Embedding, epochs: cfg.stage_one_epochs });
    }

    let mut r = layer.embed_all(&data.features)?;
    let mut books = init_codebooks(&r, qcfg.num_books, qcfg.num_codewords, qcfg.kmeans_iters, qcfg.seed)?;
    let mut codes = encode_all(&r, &books, sigma, qcfg.icm_sweeps, None);

    let mut history = Vec::with_capacity(qcfg.iters);
    for i in 0..qcfg.iters {
        for _ in 0..cfg.epochs {
            let targets = QuantTargets { books: &books, codes: &codes };
            train_epoch(data, &mut layer, &mut adam, sphere, Some(targets), cfg, Phase::Joint, epoch)?;
            epoch += 1;
        }
        r = layer.embed_all(&data.features)?;
        (books, codes) = quantizer_step(&r, &books, &codes, sphere, qcfg, i)?;

        let targets = QuantTargets { books: &books, codes: &codes };
        let (margin, quant) = batch_objective(&all, data, &layer, sphere, Some(targets), cfg, Phase::Joint)?;
        let report = IterationReport {
            iteration: i,
            margin,
            quant,
            objective: margin + cfg.lambda * quant,
            quant_objective: quantization_objective(&r, &books, &codes, sigma),
        };
        log::info!(
            "iteration {}: objective {:.6} (margin {:.6}, quant {:.6}), reconstruction {:.6}",
            i,
            report.objective,
            report.margin,
            report.quant,
            report.quant_objective
        );
        history.push(report);
    }
    phases.push(PhaseSummary { phase: Phase::Joint, epochs: qcfg.iters * cfg.epochs });

    let codes = encode_all(&r, &books, sigma, qcfg.icm_sweeps, Some(&codes));
    Ok(AlternationResult { layer, adam, books, codes, embeddings: r, history, phases })
}

/// Learns codebooks and codes for fixed embeddings (no W updates).
/// Returns the per-iteration objective (3) values.
pub fn fit_quantizer(
    r: &DMatrix<f64>,
    sphere: &SemanticSphere,
    qcfg: &QuantConfig,
) -> Result<(Codebooks, CodeMatrix, Vec<f64>)> {
    check(qcfg, r.ncols())?;
    if r.nrows() != sphere.dim() {
        return Err(HsqError::Validation(format!(
            "embedding dim {} != sphere dim {}",
            r.nrows(),
            sphere.dim()
        )));
    }
    let sigma = sphere.covariance();
    let mut books = init_codebooks(r, qcfg.num_books, qcfg.num_codewords, qcfg.kmeans_iters, qcfg.seed)?;
    let mut codes = encode_all(r, &books, sigma, qcfg.icm_sweeps, None);
    let mut history = Vec::with_capacity(qcfg.iters);
    for i in 0..qcfg.iters {
        (books, codes) = quantizer_step(r, &books, &codes, sphere, qcfg, i)?;
        history.push(quantization_objective(r, &books, &codes, sigma));
    }
    let codes = encode_all(r, &books, sigma, qcfg.icm_sweeps, Some(&codes));
    Ok((books, codes, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tag_semantics::ImageTags;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn setup(seed: u64) -> (SemanticSphere, TrainingSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, v, tags, n) = (5, 7, 6, 40);
        let mut s = DMatrix::from_fn(d, tags, |_, _| StandardNormal.sample(&mut rng));
        for j in 0..tags {
            let nn = s.column(j).norm();
            s.column_mut(j).apply(|x| *x /= nn);
        }
        let sets = (0..n)
            .map(|i| ImageTags { image: i as u32, tags: vec![rng.random_range(0..tags)] })
            .collect();
        let sphere = SemanticSphere::new(s, sets, vec![], true).unwrap();
        let feats = DMatrix::from_fn(v, n, |_, _| StandardNormal.sample(&mut rng));
        let data = TrainingSet::new(feats, &sphere).unwrap();
        (sphere, data)
    }

    fn quiet() -> (TrainConfig, QuantConfig) {
        let cfg = TrainConfig { learning_rate: 0.0, batch_size: 16, ..TrainConfig::default() };
        let q = QuantConfig {
            num_books: 2,
            num_codewords: 4,
            iters: 1,
            perturb: false,
            ..QuantConfig::default()
        };
        (cfg, q)
    }

    #[test]
    fn degenerate_schedule_is_encode_then_update() {
        let (sphere, data) = setup(1);
        let (cfg, q) = quiet();
        let layer = TransformLayer::init(5, 7, 2);
        let adam = AdamState::for_layer(&layer);
        let res = alternate_optimize(&data, layer.clone(), adam, &sphere, &cfg, &q).unwrap();

        let r = layer.embed_all(&data.features).unwrap();
        let sigma = sphere.covariance();
        let b0 = init_codebooks(&r, 2, 4, q.kmeans_iters, q.seed).unwrap();
        let c0 = encode_all(&r, &b0, sigma, q.icm_sweeps, None);
        let c1 = encode_all(&r, &b0, sigma, q.icm_sweeps, Some(&c0));
        let b1 = update_codebooks(&r, &c1).unwrap();
        let c2 = encode_all(&r, &b1, sigma, q.icm_sweeps, Some(&c1));
        assert_eq!(res.books, b1);
        assert_eq!(res.codes, c2);
        assert_eq!(res.layer, layer);
    }

    #[test]
    fn seeded_runs_give_identical_codes() {
        let (sphere, data) = setup(3);
        let cfg = TrainConfig { learning_rate: 0.01, batch_size: 8, ..TrainConfig::default() };
        let q = QuantConfig { num_books: 2, num_codewords: 4, iters: 3, ..QuantConfig::default() };
        let run = || {
            let layer = TransformLayer::init(5, 7, 9);
            let adam = AdamState::for_layer(&layer);
            alternate_optimize(&data, layer, adam, &sphere, &cfg, &q).unwrap().codes
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn staged_mode_records_two_phases() {
        let (sphere, data) = setup(4);
        let (mut cfg, q) = quiet();
        cfg.staged_mode = true;
        cfg.stage_one_epochs = 2;
        let layer = TransformLayer::init(5, 7, 2);
        let adam = AdamState::for_layer(&layer);
        let res = alternate_optimize(&data, layer, adam, &sphere, &cfg, &q).unwrap();
        let phases: Vec<Phase> = res.phases.iter().map(|p| p.phase).collect();
        assert_eq!(phases, vec![Phase::Embedding, Phase::Joint]);
    }

    #[test]
    fn too_few_points_for_k() {
        let (sphere, data) = setup(5);
        let (cfg, mut q) = quiet();
        q.num_codewords = 64;
        let layer = TransformLayer::init(5, 7, 2);
        let adam = AdamState::for_layer(&layer);
        assert!(alternate_optimize(&data, layer, adam, &sphere, &cfg, &q).is_err());
    }
}
