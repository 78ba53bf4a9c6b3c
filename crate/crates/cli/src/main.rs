use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use saetm::ctm::verify;
use saetm::eval::{classify_topics, evaluate};
use saetm::interpret::{emission_summary_json, learn_emissions, load_emissions, save_emissions, BowCorpus, BowDocument, InterpretConfig};
use saetm::io::{self, atomic_write};
use saetm::merge::{Remerger, TopicModel};
use saetm::pipeline::{
    document_groups, load_word_vectors, model_file, run_pipeline, topics_file, write_stats, EvalStage, MergeStage,
    PipelineConfig, PipelineError, StatsStage, SUMMARY_WORDS,
};
use saetm::sae::{load_checkpoint, save_checkpoint, train, Activations, TrainConfig};
use saetm::stats::topic_activity;
use saetm::synthetic::{Fixture, FixtureConfig};

#[derive(Parser)]
#[command(name = "saetm", version, about = "Topic models from sparse autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random choice; overrides seeds in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML configuration for the command.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic data and model checks.
    #[command(subcommand)]
    Ctm(CtmCommand),
    /// Sparse autoencoder training and encoding.
    #[command(subcommand)]
    Sae(SaeCommand),
    /// Learn word emissions for SAE features.
    Interpret {
        #[command(flatten)]
        common: Common,
        /// Dense activations written by `sae encode`.
        #[arg(long)]
        activations: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Cluster features and merge them into topics.
    Merge {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        emissions: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Number of topics; repeat for several models.
        #[arg(long = "k-prime", required = true)]
        k_prime: Vec<usize>,
        /// Word vectors in `token v1 ... v_d` text form.
        #[arg(long, conflicts_with = "checkpoint")]
        word_vectors: Option<PathBuf>,
        /// SAE checkpoint whose decoder rows serve as points when no word vectors are given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Judge-based coherence and WMD diversity of a topic model.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Full topic model JSON written by `merge`.
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        word_vectors: Option<PathBuf>,
    },
    /// Per-group topic activity.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        topics: PathBuf,
        #[arg(long)]
        activations: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Staged end-to-end run.
    #[command(subcommand)]
    Pipeline(PipelineCommand),
}

#[derive(Subcommand)]
enum CtmCommand {
    /// Write the synthetic fixture (data, word vectors, ground truth, pipeline config).
    Sample {
        #[command(flatten)]
        common: Common,
    },
    /// Run the MAP equivalence, limit law and density checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Monte Carlo draws for the limit law and density checks.
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
}

#[derive(Subcommand)]
enum SaeCommand {
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Write inference-time activations as a dense embedding file.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    Run {
        #[command(flatten)]
        common: Common,
    },
}

/// Exit code 2 for bad input or configuration, 3 when a computation fails.
enum Failure {
    Validation(anyhow::Error),
    Stage(anyhow::Error),
}

type Outcome<T> = Result<T, Failure>;

trait Classify<T> {
    fn invalid(self, what: &str) -> Outcome<T>;
    fn failed(self, what: &str) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::Validation(e.into().context(what.to_string())))
    }
    fn failed(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure::Stage(e.into().context(what.to_string())))
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).with_context(|| path.display().to_string()).invalid("reading config")?;
    toml::from_str(&text).with_context(|| path.display().to_string()).invalid("parsing config")
}

fn require_out(common: &Common) -> Outcome<PathBuf> {
    common.out.clone().ok_or_else(|| Failure::Validation(anyhow!("--out is required")))
}

fn load_activations(path: &Path) -> Outcome<Activations> {
    let (dense, _) = io::load_embeddings(path).invalid("reading activations")?;
    if dense.iter().any(|&v| v < 0.0) {
        return Err(Failure::Validation(anyhow!("{}: activations must be nonnegative", path.display())));
    }
    Ok(Activations::from_dense(&dense))
}

fn load_topic_model(path: &Path) -> Outcome<TopicModel> {
    let bytes = fs::read(path).with_context(|| path.display().to_string()).invalid("reading topics")?;
    serde_json::from_slice(&bytes).with_context(|| path.display().to_string()).invalid("parsing topics")
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    atomic_write(path, text.as_bytes()).failed("writing output")
}

fn ctm_sample(common: Common) -> Outcome<()> {
    let mut cfg: FixtureConfig = read_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = require_out(&common)?;
    let fixture = Fixture::generate(&cfg).invalid("fixture configuration")?;
    fixture.write(&out).failed("writing fixture")?;
    println!("wrote fixture with {} documents to {}", cfg.n_docs, out.display());
    Ok(())
}

fn ctm_verify(common: Common, samples: usize) -> Outcome<()> {
    let seed = common.seed.unwrap_or(0);
    let map = verify::map_equivalence(1000, seed).failed("map equivalence")?;
    let (limit, rows) = verify::limit_law(samples, seed).failed("limit law")?;
    let density = verify::density(1.5, 1.0, samples, seed).failed("density")?;
    let checks = [map, limit, density];
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(out) = &common.out {
        let json = serde_json::json!({ "seed": seed, "checks": checks, "limit_law": rows });
        write_text(out, &(serde_json::to_string_pretty(&json).expect("serialisable") + "\n"))?;
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Stage(anyhow!("verification failed")))
    }
}

fn sae_train(common: Common, embeddings: &Path) -> Outcome<()> {
    let mut cfg: TrainConfig = read_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let out = require_out(&common)?;
    let (x, _) = io::load_embeddings(embeddings).invalid("reading embeddings")?;
    cfg.validate(x.ncols()).invalid("training configuration")?;
    let outcome = train(x.view(), cfg).failed("training")?;
    let r2 = outcome.model.r_squared(x.view()).failed("scoring")?;
    save_checkpoint(&outcome.model, &out).failed("writing checkpoint")?;
    println!(
        "trained {} features, R^2 = {r2:.4}, {} dead, {} resampled",
        outcome.model.n_features(),
        outcome.dead_features.len(),
        outcome.resampled
    );
    Ok(())
}

fn sae_encode(common: Common, checkpoint: &Path, embeddings: &Path) -> Outcome<()> {
    let out = require_out(&common)?;
    let model = load_checkpoint(checkpoint).invalid("reading checkpoint")?;
    let (x, ids) = io::load_embeddings(embeddings).invalid("reading embeddings")?;
    let acts = model.encode_inference(x.view()).invalid("encoding")?;
    io::save_embeddings(&out, acts.to_dense().view(), ids.as_deref()).failed("writing activations")
}

fn interpret(common: Common, activations: &Path, corpus: &Path, vocab: &Path) -> Outcome<()> {
    let mut cfg: InterpretConfig = read_config(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate().invalid("interpret configuration")?;
    let out = require_out(&common)?;
    let acts = load_activations(activations)?;
    let records = io::load_corpus(corpus).invalid("reading corpus")?;
    let vocab = io::load_vocab(vocab).invalid("reading vocabulary")?;
    let docs = records
        .into_iter()
        .map(|r| BowDocument::from_tokens(r.id, &r.tokens, r.group))
        .collect();
    let corpus = BowCorpus::new(vocab.len(), docs).invalid("corpus")?;
    if corpus.n_docs() != acts.n_rows() {
        return Err(Failure::Validation(anyhow!(
            "E_ALIGN: {} activation rows but {} documents",
            acts.n_rows(),
            corpus.n_docs()
        )));
    }
    let em = learn_emissions(&corpus, &acts, &cfg).failed("learning emissions")?;
    save_emissions(&em, &out).failed("writing emissions")?;
    let mut summary = out.clone().into_os_string();
    summary.push(".json");
    write_text(Path::new(&summary), &emission_summary_json(&em, Some(&vocab), SUMMARY_WORDS))
}

fn merge(
    common: Common,
    emissions: &Path,
    vocab: &Path,
    k_prime: &[usize],
    word_vectors: Option<&Path>,
    checkpoint: Option<&Path>,
) -> Outcome<()> {
    let cfg: MergeStage = read_config(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(0);
    let out = require_out(&common)?;
    let em = load_emissions(emissions).invalid("reading emissions")?;
    let vocab = io::load_vocab(vocab).invalid("reading vocabulary")?;
    if vocab.len() != em.vocab_size() {
        return Err(Failure::Validation(anyhow!(
            "E_ALIGN: vocabulary has {} words, emissions {}",
            vocab.len(),
            em.vocab_size()
        )));
    }
    let remerger = match (word_vectors, checkpoint) {
        (Some(p), _) => {
            let table = load_word_vectors(p, &vocab).map_err(|e| Failure::Validation(anyhow!(e)))?;
            Remerger::from_word_embeddings(&em, &table, cfg.top_p).failed("embedding topics")?
        }
        (None, Some(p)) => {
            let model = load_checkpoint(p).invalid("reading checkpoint")?;
            Remerger::from_decoder(&em, model.feature_directions().view()).invalid("decoder points")?
        }
        (None, None) => return Err(Failure::Validation(anyhow!("give --word-vectors or --checkpoint"))),
    };
    let mut remerger = remerger.drop_rare(&em, cfg.min_prior);
    remerger.kmeans = cfg.kmeans;
    let em_hash = saetm::pipeline::file_hash(emissions).invalid("hashing emissions")?;
    for &k in k_prime {
        let mut tm = remerger.merge(&em, k, seed).failed(&format!("merging into {k} topics"))?;
        tm.emission_hash = Some(em_hash.clone());
        write_text(&out.join(model_file(k)), &serde_json::to_string(&tm).expect("serialisable"))?;
        write_text(&out.join(topics_file(k)), &(tm.to_json(Some(&vocab), SUMMARY_WORDS) + "\n"))?;
        println!("{k} topics from {} features -> {}", remerger.retained_features().len(), out.join(topics_file(k)).display());
    }
    Ok(())
}

fn eval(common: Common, topics: &Path, vocab: &Path, word_vectors: Option<&Path>) -> Outcome<()> {
    let stage: EvalStage = read_config(common.config.as_deref())?;
    let seed = common.seed.unwrap_or(0);
    let out = require_out(&common)?;
    let tm = load_topic_model(topics)?;
    let vocab = io::load_vocab(vocab).invalid("reading vocabulary")?;
    if tm.topics.iter().any(|t| t.word_dist.len() != vocab.len()) {
        return Err(Failure::Validation(anyhow!("E_ALIGN: topic word distributions do not match the vocabulary")));
    }
    let table = word_vectors
        .map(|p| load_word_vectors(p, &vocab))
        .transpose()
        .map_err(|e| Failure::Validation(anyhow!(e)))?;
    let mut spec = stage.judge.clone();
    if let (Some(s), saetm::eval::StubJudge::UniformRandom { seed }) = (common.seed, &mut spec.stub) {
        *seed = s;
    }
    let judge = spec.build();
    let cfg = saetm::eval::EvalConfig {
        trials_per_topic: stage.trials_per_topic,
        rating_samples: stage.rating_samples,
        concurrency: stage.concurrency,
        seed,
    };
    let report = evaluate(&tm, &vocab, table.as_ref(), judge.as_ref(), &cfg).failed("evaluation")?;
    let mut json = serde_json::to_value(&report).expect("serialisable");
    if stage.classify_categories {
        let cats = classify_topics(&tm, &vocab, judge.as_ref(), cfg.concurrency).failed("classification")?;
        json["categories"] = serde_json::to_value(cats).expect("serialisable");
    }
    write_text(&out, &(serde_json::to_string_pretty(&json).expect("serialisable") + "\n"))?;
    let div = report.diversity.map_or("n/a".to_string(), |d| format!("{d:.4}"));
    println!("C_I = {:.2}, C_R = {:.2}, diversity = {div}", report.c_i, report.c_r);
    Ok(())
}

fn stats(common: Common, topics: &Path, activations: &Path, corpus: &Path, vocab: &Path) -> Outcome<()> {
    let cfg: StatsStage = read_config(common.config.as_deref())?;
    let out = require_out(&common)?;
    let tm = load_topic_model(topics)?;
    let acts = load_activations(activations)?;
    let records = io::load_corpus(corpus).invalid("reading corpus")?;
    let vocab = io::load_vocab(vocab).invalid("reading vocabulary")?;
    let (labels, groups) = document_groups(&records);
    let st = topic_activity(&acts, &tm, &labels, &groups, cfg.over_active_threshold).invalid("activity statistics")?;
    let top = write_stats(&out, tm.topics.len(), &st, &tm, &vocab, cfg.top_n).failed("writing statistics")?;
    println!("top variance topics: {top:?}");
    Ok(())
}

fn pipeline_run(common: Common) -> Outcome<()> {
    let path = common.config.clone().ok_or_else(|| Failure::Validation(anyhow!("--config is required")))?;
    let mut cfg = PipelineConfig::load(&path).map_err(pipeline_failure)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = common.out {
        cfg.out_dir = o;
    }
    let summary = run_pipeline(&cfg).map_err(pipeline_failure)?;
    for r in &summary.stages {
        println!("{:<12} {:?}", r.stage, r.status);
    }
    println!("artifacts in {}", summary.out_dir.display());
    Ok(())
}

fn pipeline_failure(e: PipelineError) -> Failure {
    if e.is_validation() {
        Failure::Validation(e.into())
    } else {
        Failure::Stage(e.into())
    }
}

fn dispatch(cli: Cli) -> Outcome<()> {
    match cli.command {
        Command::Ctm(CtmCommand::Sample { common }) => ctm_sample(common),
        Command::Ctm(CtmCommand::Verify { common, samples }) => ctm_verify(common, samples),
        Command::Sae(SaeCommand::Train { common, embeddings }) => sae_train(common, &embeddings),
        Command::Sae(SaeCommand::Encode { common, checkpoint, embeddings }) => sae_encode(common, &checkpoint, &embeddings),
        Command::Interpret { common, activations, corpus, vocab } => interpret(common, &activations, &corpus, &vocab),
        Command::Merge { common, emissions, vocab, k_prime, word_vectors, checkpoint } => {
            merge(common, &emissions, &vocab, &k_prime, word_vectors.as_deref(), checkpoint.as_deref())
        }
        Command::Eval { common, topics, vocab, word_vectors } => eval(common, &topics, &vocab, word_vectors.as_deref()),
        Command::Stats { common, topics, activations, corpus, vocab } => {
            stats(common, &topics, &activations, &corpus, &vocab)
        }
        Command::Pipeline(PipelineCommand::Run { common }) => pipeline_run(common),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
