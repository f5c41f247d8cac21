//! `hsq` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use hsq_core::eval::{database_from_labels, evaluate, GroundTruth};
use hsq_core::io::{self, LabelRecord, SearchResult};
use hsq_core::pipeline::{
    run_pipeline, search_embedded, sphere_from_files, train_model, PipelineInputs, CONFIG_FILE,
    HISTORY_FILE, INDEX_DIR, MODEL_FILE,
};
use hsq_core::quantizer::{encode_all, fit_quantizer};
use hsq_core::synth::{generate, SynthSpec};
use hsq_core::{HsqError, PipelineConfig, RetrievalIndex, SemanticSphere};

#[derive(Parser)]
#[command(name = "hsq", version, about = "Hyperspherical quantization for tag-supervised image retrieval")]
struct Cli {
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "HSQ_THREADS")]
    threads: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key=value` overrides, applied in order.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML or JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. `--set lambda=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Tag-embedding commands.
    #[command(subcommand)]
    Tags(TagsCommand),
    /// Trains the embedding layer jointly with the quantizer.
    Train {
        #[arg(long)]
        sphere: PathBuf,
        /// Database image features (HSQV1), column = image id.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Maps image features to the sphere with a trained model.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Codebook learning and encoding for fixed embeddings.
    #[command(subcommand)]
    Quantize(QuantizeCommand),
    /// Ranks the index for every query.
    Search {
        #[arg(long)]
        index: PathBuf,
        /// Query vectors (HSQV1). Raw features when `--model` is given,
        /// sphere embeddings otherwise.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        top_n: usize,
        /// Image id of the first query.
        #[arg(long, default_value_t = 0)]
        query_id_offset: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// MAP@R, PR curve and P@N of a results file.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Database ids come from this index; otherwise every labelled
        /// non-query image.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, default_value_t = 5000)]
        map_r: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes a synthetic clustered corpus.
    Synth {
        /// TOML or JSON generator spec; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        per_cluster: Option<usize>,
        #[arg(long)]
        queries_per_cluster: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        synonyms: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sphere, training, index, search and evaluation in one run.
    Pipeline {
        /// Directory written by `hsq synth`; replaces the five input flags.
        #[arg(long, conflicts_with_all = ["tags", "assignments", "features", "queries", "labels"])]
        data: Option<PathBuf>,
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long)]
        assignments: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        query_id_offset: u32,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Subcommand)]
enum TagsCommand {
    /// Graph enhancement, merging and the semantic sphere.
    BuildSphere {
        #[arg(long)]
        tags: PathBuf,
        #[arg(long)]
        assignments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Subcommand)]
enum QuantizeCommand {
    /// Learns codebooks and codes for fixed embeddings.
    Train {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        sphere: PathBuf,
        /// Index directory to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Encodes embeddings against an existing index's codebooks.
    Encode {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        sphere: PathBuf,
        /// Codes file (HSQB1) to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<PipelineConfig> {
    let mut table = match &args.config {
        Some(p) => {
            let cfg = PipelineConfig::load(p)?;
            toml::Table::try_from(&cfg).context("config to table")?
        }
        None => toml::Table::new(),
    };
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!(HsqError::Config(format!("--set expects KEY=VALUE, got {kv:?}")));
        };
        let v = v.trim();
        // bare words fall back to strings so `--set x=abc` gives a type error, not a parse error
        let value = toml::from_str::<toml::Table>(&format!("v = {v}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        table.insert(k.trim().to_string(), value);
    }
    let cfg: PipelineConfig =
        table.try_into().map_err(|e| HsqError::Config(format!("{e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_synth_spec(path: Option<&Path>) -> anyhow::Result<SynthSpec> {
    let Some(p) = path else { return Ok(SynthSpec::default()) };
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    let spec = if p.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| HsqError::Config(format!("{}: {e}", p.display())))?
    } else {
        toml::from_str(&text).map_err(|e| HsqError::Config(format!("{}: {e}", p.display())))?
    };
    Ok(spec)
}

fn mkdir(p: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Tags(TagsCommand::BuildSphere { tags, assignments, out, cfg }) => {
            let cfg = load_config(&cfg)?;
            let (sphere, remap) = sphere_from_files(&tags, &assignments, &cfg.sphere_params())?;
            mkdir(&out)?;
            sphere.save(&out, Some(&remap))?;
            cfg.save(&out.join(CONFIG_FILE))?;
            println!(
                "sphere: {} tags (from {}), {} images, {} excluded",
                sphere.len(),
                remap.old_count(),
                sphere.image_tags().len(),
                sphere.excluded().len()
            );
        }
        Command::Train { sphere, features, out, cfg } => {
            let cfg = load_config(&cfg)?;
            let sphere = SemanticSphere::load(&sphere)?;
            let res = train_model(io::read_embeddings(&features)?, &sphere, &cfg)?;
            mkdir(&out)?;
            cfg.save(&out.join(CONFIG_FILE))?;
            io::write_checkpoint(&out.join(MODEL_FILE), &res.layer, &res.adam)?;
            io::write_json(&out.join(HISTORY_FILE), &res.history)?;
            RetrievalIndex::with_sequential_ids(res.books, res.codes)?.save(&out.join(INDEX_DIR))?;
            if let Some(last) = res.history.last() {
                println!("trained: objective {:.6}, quantization {:.6}", last.objective, last.quant_objective);
            }
        }
        Command::Embed { model, features, out } => {
            let (layer, _) = io::read_checkpoint(&model)?;
            let r = layer.embed_all(&io::read_embeddings(&features)?)?;
            io::write_embeddings(&out, &r)?;
            println!("embedded {} vectors", r.ncols());
        }
        Command::Quantize(QuantizeCommand::Train { embeddings, sphere, out, cfg }) => {
            let cfg = load_config(&cfg)?;
            let sphere = SemanticSphere::load(&sphere)?;
            let r = io::read_embeddings(&embeddings)?;
            let (books, codes, history) = fit_quantizer(&r, &sphere, &cfg.quant_config())?;
            let index = RetrievalIndex::with_sequential_ids(books, codes)?;
            index.save(&out)?;
            cfg.save(&out.join(CONFIG_FILE))?;
            io::write_json(&out.join(HISTORY_FILE), &history)?;
            println!("quantized {} points, {} bits each", index.len(), index.books().code_bits());
        }
        Command::Quantize(QuantizeCommand::Encode { index, embeddings, sphere, out, cfg }) => {
            let cfg = load_config(&cfg)?;
            let index = RetrievalIndex::load(&index)?;
            let sphere = SemanticSphere::load(&sphere)?;
            let r = io::read_embeddings(&embeddings)?;
            if r.nrows() != index.books().dim() {
                bail!(HsqError::Validation(format!(
                    "embedding dim {} != codebook dim {}",
                    r.nrows(),
                    index.books().dim()
                )));
            }
            let codes = encode_all(&r, index.books(), sphere.covariance(), cfg.icm_sweeps, None);
            io::write_codes(&out, &codes)?;
            println!("encoded {} points", codes.len());
        }
        Command::Search { index, queries, model, top_n, query_id_offset, out } => {
            let index = RetrievalIndex::load(&index)?;
            let mut q = io::read_embeddings(&queries)?;
            if let Some(m) = model {
                let (layer, _) = io::read_checkpoint(&m)?;
                q = layer.embed_all(&q)?;
            }
            let results = search_embedded(&index, &q, query_id_offset, top_n)?;
            io::write_jsonl(&out, &results)?;
            println!("searched {} queries", results.len());
        }
        Command::Eval { results, labels, index, map_r, out } => {
            if map_r == 0 {
                bail!(HsqError::Validation("map_r must be >= 1".into()));
            }
            let results: Vec<SearchResult> = io::read_jsonl(&results)?;
            let labels: Vec<LabelRecord> = io::read_jsonl(&labels)?;
            let gt = GroundTruth::from_records(&labels);
            let database = match index {
                Some(p) => RetrievalIndex::load(&p)?.ids().to_vec(),
                None => database_from_labels(&gt, &results),
            };
            let report = evaluate(&results, &gt, &database, map_r);
            if let Some(p) = out {
                io::write_json(&p, &report)?;
            }
            println!("MAP@{} = {:.4} over {} queries", map_r, report.map, report.queries);
        }
        Command::Synth { spec, clusters, per_cluster, queries_per_cluster, noise, synonyms, seed, out } => {
            let mut s = load_synth_spec(spec.as_deref())?;
            if let Some(v) = clusters {
                s.clusters = v;
            }
            if let Some(v) = per_cluster {
                s.per_cluster = v;
            }
            if let Some(v) = queries_per_cluster {
                s.queries_per_cluster = v;
            }
            if let Some(v) = noise {
                s.noise = v;
            }
            if let Some(v) = seed {
                s.seed = v;
            }
            s.synonyms |= synonyms;
            let data = generate(&s)?;
            data.write(&out)?;
            println!(
                "synth: {} database images, {} queries, {} tags",
                s.database_size(),
                s.query_count(),
                data.tags.ncols()
            );
        }
        Command::Pipeline { data, tags, assignments, features, queries, labels, query_id_offset, out, cfg } => {
            let cfg = load_config(&cfg)?;
            let inputs = match data {
                Some(d) => PipelineInputs::from_synth_dir(&d)?,
                None => {
                    let need = |p: Option<PathBuf>, name: &str| {
                        p.ok_or_else(|| HsqError::Validation(format!("--{name} is required without --data")))
                    };
                    PipelineInputs {
                        tags: need(tags, "tags")?,
                        assignments: need(assignments, "assignments")?,
                        features: need(features, "features")?,
                        queries: need(queries, "queries")?,
                        labels: need(labels, "labels")?,
                        query_id_offset,
                    }
                }
            };
            let res = run_pipeline(&inputs, &cfg, &out)?;
            println!("MAP@{} = {:.4} over {} queries", cfg.map_r, res.report.map, res.report.queries);
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<HsqError>() {
        Some(e) if e.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot size thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
