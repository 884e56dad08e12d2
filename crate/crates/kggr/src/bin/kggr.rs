//! Command-line interface: graph construction, synthetic data generation,
//! training (single-stage and two-stage few-shot), evaluation, and gradient
//! verification. On failure, one machine-readable JSON error line goes to
//! stderr and the exit code is nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kggr::error::{Error, Result};
use kggr::harness::{
    evaluate, k_shot_split, load_jsonl, model_grad_check, resume_stage2, save_embeddings,
    save_jsonl, split, synth_dataset, train_mlr, Dataset, EvalFlags, ModelConfig, ModelParams,
    PlantedPair, SynthSpec, TrainState,
};
use kggr::metrics::ApVariant;
use kggr::vocab_graph::{
    build_cooccurrence, build_semantic_graph, load_embeddings, CooccurrenceGraph, CountMode,
    LabelVocabulary, SemanticEmbeddingTable,
};

#[derive(Parser)]
#[command(
    name = "kggr",
    version,
    about = "Knowledge-guided graph routing for multi-label recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Every model-configuration key, overridable on the command line. Flag
/// values take precedence over the configuration file.
#[derive(Args, Default, Clone)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    categories: Option<usize>,
    #[arg(long)]
    grid_width: Option<usize>,
    #[arg(long)]
    grid_height: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    semantic_dim: Option<usize>,
    #[arg(long)]
    joint_dim: Option<usize>,
    #[arg(long)]
    fused_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    feature_steps: Option<usize>,
    #[arg(long)]
    semantic_steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    lr_decay_step: Option<u64>,
    #[arg(long)]
    target_map: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stage1_steps: Option<u64>,
    #[arg(long)]
    stage2_steps: Option<u64>,
    #[arg(long)]
    stage2_learning_rate: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    disable_sga: Option<bool>,
    #[arg(long)]
    disable_kefp: Option<bool>,
    #[arg(long)]
    disable_gfp: Option<bool>,
    #[arg(long)]
    disable_gsp: Option<bool>,
    /// cross_entropy | euclidean
    #[arg(long)]
    loss: Option<String>,
    /// contextualized | raw
    #[arg(long)]
    score_source: Option<String>,
    #[arg(long)]
    pool_fused: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self, base: ModelConfig) -> Result<ModelConfig> {
        let mut c = match &self.config {
            Some(path) => ModelConfig::from_file(path, base)?,
            None => base,
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        apply!(
            categories,
            grid_width,
            grid_height,
            channels,
            semantic_dim,
            joint_dim,
            fused_dim,
            hidden_dim,
            feature_steps,
            semantic_steps,
            learning_rate,
            beta1,
            beta2,
            batch_size,
            max_steps,
            seed,
            stage1_steps,
            stage2_steps,
            stage2_learning_rate,
            gamma,
            disable_sga,
            disable_kefp,
            disable_gfp,
            disable_gsp,
            pool_fused
        );
        if let Some(v) = self.lr_decay_step {
            c.lr_decay_step = Some(v);
        }
        if let Some(v) = self.target_map {
            c.target_map = Some(v);
        }
        if let Some(v) = &self.loss {
            c.loss = v.parse()?;
        }
        if let Some(v) = &self.score_source {
            c.score_source = v.parse()?;
        }
        Ok(c)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a co-occurrence (or semantic-similarity) adjacency from a
    /// JSON Lines dataset's annotations.
    BuildGraph {
        /// Dataset whose label sets define the graph.
        #[arg(long)]
        annotations: PathBuf,
        /// Output adjacency JSON path.
        #[arg(long)]
        out: PathBuf,
        /// strict | lenient handling of zero-occurrence categories.
        #[arg(long, default_value = "strict")]
        mode: String,
        /// statistical | semantic.
        #[arg(long, default_value = "statistical")]
        kind: String,
        /// Embedding text file (required for the semantic kind).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Comma-separated explicit vocabulary; sorted label union otherwise.
        #[arg(long)]
        labels: Option<String>,
    },
    /// Generate a synthetic dataset with planted co-occurrence structure.
    Synth {
        /// Output directory (train.jsonl, test.jsonl, embeddings.txt).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        categories: usize,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        test_samples: usize,
        #[arg(long, default_value_t = 4)]
        width: usize,
        #[arg(long, default_value_t = 4)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        channels: usize,
        /// Planted conditionals, e.g. "0:1:0.9;2:3:0.8" (when a is present,
        /// b follows with the given probability).
        #[arg(long, default_value = "")]
        pairs: String,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 0.3)]
        base_rate: f64,
        /// Comma-separated category indices with attenuated signatures.
        #[arg(long, default_value = "")]
        weak: String,
        #[arg(long, default_value_t = 0.25)]
        weak_strength: f64,
        #[arg(long, default_value_t = 1.0)]
        signal_strength: f64,
        #[arg(long, default_value_t = 8)]
        embed_dim: usize,
        #[arg(long, default_value_t = 0.6)]
        embed_align: f64,
        #[arg(long, default_value_t = 1.0)]
        signature_mix: f64,
        #[arg(long, default_value = "c")]
        label_prefix: String,
        /// Share this across datasets that must live in one feature space.
        #[arg(long)]
        signature_map_seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only K support samples per category (few-shot novel sets).
        #[arg(long)]
        k_shot: Option<usize>,
    },
    /// Train the full model on a multi-label dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Model checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Also write per-epoch JSON log lines to this file.
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Few-shot stage 1: train everything on the base categories.
    FslStage1 {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Few-shot stage 2: adapt a stage-1 model to novel categories with a
    /// semantic-similarity graph, frozen attention/backbone, and the
    /// weight-regularized loss.
    FslStage2 {
        /// Stage-1 checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        novel: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Evaluate a checkpoint: mAP, per-class AP, and P/R/F1 under the
    /// top-3 and 0.5-threshold protocols.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Write the report JSON here (a table prints either way).
        #[arg(long)]
        out: Option<PathBuf>,
        /// noninterpolated | elevenpoint
        #[arg(long, default_value = "noninterpolated")]
        ap_variant: String,
        /// Drop the 0.5 probability filter inside the top-3 protocol.
        #[arg(long)]
        no_top3_filter: bool,
        #[command(flatten)]
        overrides: ConfigArgs,
    },
    /// Verify end-to-end gradients against central finite differences at
    /// 64 bits on a synthetic batch.
    Gradcheck {
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[command(flatten)]
        overrides: ConfigArgs,
    },
}

fn parse_pairs(s: &str) -> Result<Vec<PlantedPair>> {
    let mut pairs = Vec::new();
    for part in s.split(';').filter(|p| !p.trim().is_empty()) {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 3 {
            return Err(Error::Config(format!("pair '{part}' must be a:b:prob")));
        }
        pairs.push(PlantedPair {
            a: fields[0]
                .parse()
                .map_err(|_| Error::Config(format!("bad pair index '{}'", fields[0])))?,
            b: fields[1]
                .parse()
                .map_err(|_| Error::Config(format!("bad pair index '{}'", fields[1])))?,
            prob: fields[2]
                .parse()
                .map_err(|_| Error::Config(format!("bad pair probability '{}'", fields[2])))?,
        });
    }
    Ok(pairs)
}

fn parse_indices(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad index '{p}'")))
        })
        .collect()
}

fn load_dataset_and_table(
    data: &Path,
    embeddings: &Path,
) -> Result<(Dataset, SemanticEmbeddingTable)> {
    let dataset = load_jsonl(data, None)?;
    let table = load_embeddings(embeddings, &dataset.vocab)?;
    Ok((dataset, table))
}

/// Training commands adopt the dataset's category count; a conflicting
/// explicit `--categories` is an error.
fn fit_categories(
    mut config: ModelConfig,
    data: &Dataset,
    explicit: Option<usize>,
) -> Result<ModelConfig> {
    if let Some(c) = explicit {
        if c != data.vocab.len() {
            return Err(Error::Config(format!(
                "--categories {c} conflicts with the dataset's {} categories",
                data.vocab.len()
            )));
        }
    }
    config.categories = data.vocab.len();
    Ok(config)
}

fn write_logs(path: &Path, logs: &[kggr::harness::EpochLog]) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for entry in logs {
        writeln!(f, "{}", serde_json::to_string(entry)?)?;
    }
    Ok(())
}

fn print_logs(logs: &[kggr::harness::EpochLog]) -> Result<()> {
    for entry in logs {
        println!("{}", serde_json::to_string(entry)?);
    }
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::BuildGraph {
            annotations,
            out,
            mode,
            kind,
            embeddings,
            labels,
        } => {
            let dataset = load_jsonl(&annotations, None)?;
            let vocab = match labels {
                Some(list) => LabelVocabulary::new(list.split(',').map(str::trim))?,
                None => dataset.vocab.clone(),
            };
            let graph: CooccurrenceGraph = match kind.as_str() {
                "statistical" => {
                    let mode = match mode.as_str() {
                        "strict" => CountMode::Strict,
                        "lenient" => CountMode::Lenient,
                        other => {
                            return Err(Error::Config(format!(
                                "mode must be strict or lenient, got '{other}'"
                            )))
                        }
                    };
                    let annotations: Vec<Vec<String>> = dataset
                        .samples
                        .iter()
                        .map(|s| s.label_names(&dataset.vocab))
                        .collect();
                    build_cooccurrence(&annotations, &vocab, mode)?
                }
                "semantic" => {
                    let path = embeddings.ok_or_else(|| {
                        Error::Config("--embeddings is required for the semantic kind".to_string())
                    })?;
                    let table = load_embeddings(&path, &vocab)?;
                    build_semantic_graph(&table)?
                }
                other => {
                    return Err(Error::Config(format!(
                        "kind must be statistical or semantic, got '{other}'"
                    )))
                }
            };
            graph.save(&out)?;
            println!("wrote {} ({} categories)", out.display(), graph.size());
        }

        Command::Synth {
            out,
            categories,
            samples,
            test_samples,
            width,
            height,
            channels,
            pairs,
            noise,
            base_rate,
            weak,
            weak_strength,
            signal_strength,
            embed_dim,
            embed_align,
            signature_mix,
            label_prefix,
            signature_map_seed,
            seed,
            k_shot,
        } => {
            let spec = SynthSpec {
                categories,
                samples: samples + test_samples,
                width,
                height,
                channels,
                pairs: parse_pairs(&pairs)?,
                noise,
                base_rate,
                weak: parse_indices(&weak)?,
                weak_strength,
                signal_strength,
                embed_dim,
                embed_align,
                signature_embed_mix: signature_mix,
                label_prefix,
                signature_map_seed,
            };
            let (world, table) = synth_dataset(&spec, seed)?;
            std::fs::create_dir_all(&out)?;
            let (train, test) = split(world, samples);
            let train = match k_shot {
                Some(k) => k_shot_split(&train, k).0,
                None => train,
            };
            save_jsonl(&train, &out.join("train.jsonl"))?;
            if test_samples > 0 {
                save_jsonl(&test, &out.join("test.jsonl"))?;
            }
            save_embeddings(&table, &out.join("embeddings.txt"))?;
            println!(
                "wrote {} train / {} test samples and embeddings under {}",
                train.samples.len(),
                test.samples.len(),
                out.display()
            );
        }

        Command::Train {
            data,
            embeddings,
            out,
            log,
            overrides,
        } => {
            let (dataset, table) = load_dataset_and_table(&data, &embeddings)?;
            let config = overrides.resolve(ModelConfig::desk())?;
            let config = fit_categories(config, &dataset, overrides.categories)?;
            let (state, logs) = train_mlr(&config, &dataset, &table)?;
            state.save(&out)?;
            print_logs(&logs)?;
            if let Some(path) = log {
                write_logs(&path, &logs)?;
            }
            eprintln!("saved model to {}", out.display());
        }

        Command::FslStage1 {
            base,
            embeddings,
            out,
            overrides,
        } => {
            let (dataset, table) = load_dataset_and_table(&base, &embeddings)?;
            let mut config = overrides.resolve(ModelConfig::desk())?;
            config = fit_categories(config, &dataset, overrides.categories)?;
            config.max_steps = config.stage1_steps;
            let (state, logs) = train_mlr(&config, &dataset, &table)?;
            state.save(&out)?;
            print_logs(&logs)?;
            eprintln!("saved stage-1 model to {}", out.display());
        }

        Command::FslStage2 {
            model,
            novel,
            embeddings,
            out,
            overrides,
        } => {
            let stage1 = TrainState::load(&model)?;
            let (dataset, table) = load_dataset_and_table(&novel, &embeddings)?;
            for name in dataset.vocab.names() {
                if stage1.graph.labels().contains(name) {
                    return Err(Error::Config(format!(
                        "novel category '{name}' overlaps the stage-1 base set"
                    )));
                }
            }
            for c in 0..dataset.vocab.len() {
                if dataset.positives(c) == 0 {
                    return Err(Error::Dataset(format!(
                        "novel category '{}' has no training sample (K = 0)",
                        dataset.vocab.name(c)
                    )));
                }
            }
            let mut config = overrides.resolve(stage1.config.clone())?;
            config = fit_categories(config, &dataset, overrides.categories)?;

            let graph = build_semantic_graph(&table)?;
            let mut params = stage1.params.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5354_4147_4532);
            params.classifiers = kggr::propagation::ClassifierWeights::init(
                &mut rng,
                config.categories,
                config.hidden_dim,
            );
            let (state, logs) = resume_stage2(&config, params, &graph, &dataset, &table)?;
            state.save(&out)?;
            print_logs(&logs)?;
            eprintln!("saved stage-2 model to {}", out.display());
        }

        Command::Eval {
            model,
            data,
            embeddings,
            out,
            ap_variant,
            no_top3_filter,
            overrides,
        } => {
            let state = TrainState::load(&model)?;
            let requested = overrides.resolve(state.config.clone())?;
            state.config.check_ablation_compat(&requested)?;
            let vocab = LabelVocabulary::new(state.graph.labels().iter().cloned())?;
            let dataset = load_jsonl(&data, Some(&vocab))?;
            let table = load_embeddings(&embeddings, &dataset.vocab)?;
            let flags = EvalFlags {
                ap_variant: match ap_variant.as_str() {
                    "noninterpolated" => ApVariant::NonInterpolated,
                    "elevenpoint" => ApVariant::ElevenPoint,
                    other => {
                        return Err(Error::Config(format!(
                            "ap_variant must be noninterpolated or elevenpoint, got '{other}'"
                        )))
                    }
                },
                top3_filter: !no_top3_filter,
            };
            let report = evaluate(&state, &dataset, &table, &flags)?;
            println!("{report}");
            if let Some(path) = out {
                std::fs::write(&path, report.to_json_string()?)?;
                eprintln!("wrote report to {}", path.display());
            }
        }

        Command::Gradcheck {
            eps,
            tol,
            batch,
            overrides,
        } => {
            let config = overrides.resolve(ModelConfig::desk())?;
            config.validate()?;
            let spec = SynthSpec {
                categories: config.categories,
                samples: batch,
                width: config.grid_width,
                height: config.grid_height,
                channels: config.channels,
                embed_dim: config.semantic_dim,
                noise: 0.3,
                base_rate: 0.4,
                ..SynthSpec::default()
            };
            let (data, table) = synth_dataset(&spec, config.seed)?;
            let graph = build_semantic_graph(&table)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let params: ModelParams<f32> = ModelParams::init(&mut rng, &config, None);
            let refs: Vec<&kggr::harness::MultiLabelSample> = data.samples.iter().collect();
            let report =
                model_grad_check(&config, &params.to_f64(), &graph, &table, &refs, eps, tol)?;
            println!("{report}");
            if !report.pass {
                return Err(Error::Config(format!(
                    "gradient check failed: max relative error {:.3e} > {:.1e}",
                    report.max_rel_err, tol
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": err.to_string() }));
            ExitCode::FAILURE
        }
    }
}
