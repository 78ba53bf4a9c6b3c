//! Staged end-to-end runner: SAE, emissions, topic embeddings, merging,
//! evaluation and activity statistics.
//!
//! Every stage hashes its inputs (upstream artifact hashes plus its own
//! configuration). A stage whose input hash and output files match the hash
//! log `hashes.json` is skipped. One line per run is appended to `run_log.jsonl`.
//!
//! Configuration is TOML:
//!
//! ```toml
//! seed = 0
//! out_dir = "out"
//!
//! [data]
//! embeddings = "embeddings.embv"
//! corpus = "corpus.jsonl"
//! vocab = "vocab.txt"
//! word_vectors = "word_vectors.txt"   # optional
//!
//! [sae]
//! checkpoint = "pretrained.sae"       # optional; skips training
//! [sae.train]
//! activation = "top_k"
//! k_active = 2
//!
//! [interpret]
//! pi = 0.3
//!
//! [merge]
//! k_prime = [4, 8]
//! points = "auto"                     # auto | word_vectors | decoder
//!
//! [eval]
//! enabled = true
//! [eval.judge]
//! backend = "stub"                    # stub | http
//! stub = { kind = "oracle" }
//!
//! [stats]
//! top_n = 10
//! ```
//!
//! Relative paths resolve against the directory of the configuration file.
//! The top-level `seed` replaces the seed of every stage.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eval::{classify_topics, evaluate, EvalConfig, HttpJudge, HttpJudgeConfig, Judge, StubJudge};
use crate::interpret::{emission_summary_json, learn_emissions, load_emissions, save_emissions, InterpretConfig};
use crate::io::{self, atomic_write, CorpusRecord, Dataset, IoError};
use crate::merge::{KMeansConfig, Remerger, TopicModel, WordEmbeddingTable, DEFAULT_TOP_P};
use crate::sae::{load_checkpoint, save_checkpoint, train, Activations, SaeModel, TrainConfig};
use crate::stats::{activity_svg, top_variance_topics, topic_activity, GroupStats, OVER_ACTIVE_THRESHOLD};

pub const HASH_LOG: &str = "hashes.json";
pub const RUN_LOG: &str = "run_log.jsonl";
pub const CHECKPOINT_FILE: &str = "sae.ckpt";
pub const EMISSIONS_FILE: &str = "emissions.emis";
pub const EMISSION_SUMMARY_FILE: &str = "emissions.json";
pub const POINTS_FILE: &str = "topic_points.embv";
pub const REPORT_FILE: &str = "report.json";
/// Words listed per topic in summaries.
pub const SUMMARY_WORDS: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("E_CONFIG: {0}")]
    Config(String),
    #[error(transparent)]
    Input(#[from] IoError),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

impl PipelineError {
    /// Configuration and input errors, as opposed to failures inside a stage.
    pub fn is_validation(&self) -> bool {
        !matches!(self, PipelineError::Stage { .. })
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;
type StageResult<T> = std::result::Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub embeddings: PathBuf,
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub word_vectors: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaeStage {
    /// Pretrained checkpoint; when set no training happens.
    pub checkpoint: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointSource {
    /// Word vectors when `data.word_vectors` is set, decoder rows otherwise.
    #[default]
    Auto,
    WordVectors,
    Decoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MergeStage {
    pub k_prime: Vec<usize>,
    pub points: PointSource,
    pub top_p: f64,
    /// Features whose share of activation mass is below this are not clustered.
    pub min_prior: f64,
    pub kmeans: KMeansConfig,
}

impl Default for MergeStage {
    fn default() -> Self {
        Self {
            k_prime: vec![10],
            points: PointSource::Auto,
            top_p: DEFAULT_TOP_P,
            min_prior: 0.0,
            kmeans: KMeansConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeBackend {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSpec {
    pub backend: JudgeBackend,
    pub stub: StubJudge,
    pub http: HttpJudgeConfig,
}

impl Default for JudgeSpec {
    fn default() -> Self {
        Self {
            backend: JudgeBackend::Stub,
            stub: StubJudge::UniformRandom { seed: 0 },
            http: HttpJudgeConfig::default(),
        }
    }
}

impl JudgeSpec {
    pub fn build(&self) -> Box<dyn Judge> {
        match self.backend {
            JudgeBackend::Stub => Box::new(self.stub.clone()),
            JudgeBackend::Http => Box::new(HttpJudge::new(self.http.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalStage {
    pub enabled: bool,
    pub judge: JudgeSpec,
    pub trials_per_topic: usize,
    pub rating_samples: usize,
    pub concurrency: usize,
    /// Abstract/concrete classification of every topic.
    pub classify_categories: bool,
}

impl Default for EvalStage {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            enabled: true,
            judge: JudgeSpec::default(),
            trials_per_topic: e.trials_per_topic,
            rating_samples: e.rating_samples,
            concurrency: e.concurrency,
            classify_categories: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsStage {
    pub enabled: bool,
    pub over_active_threshold: f64,
    pub top_n: usize,
}

impl Default for StatsStage {
    fn default() -> Self {
        Self { enabled: true, over_active_threshold: OVER_ACTIVE_THRESHOLD, top_n: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub sae: SaeStage,
    pub interpret: InterpretConfig,
    pub merge: MergeStage,
    pub eval: EvalStage,
    pub stats: StatsStage,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("saetm-out"),
            data: DataConfig::default(),
            sae: SaeStage::default(),
            interpret: InterpretConfig::default(),
            merge: MergeStage::default(),
            eval: EvalStage::default(),
            stats: StatsStage::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Parses a file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        fix(&mut self.data.embeddings);
        fix(&mut self.data.corpus);
        fix(&mut self.data.vocab);
        if let Some(p) = &mut self.data.word_vectors {
            fix(p);
        }
        if let Some(p) = &mut self.sae.checkpoint {
            fix(p);
        }
    }

    /// Copy with every stage seed replaced by the top-level seed.
    pub fn seeded(&self) -> Self {
        let mut c = self.clone();
        c.sae.train.seed = c.seed;
        c.interpret.seed = c.seed;
        if let StubJudge::UniformRandom { seed } = &mut c.eval.judge.stub {
            *seed = c.seed;
        }
        c
    }

    /// Settings for the bundled synthetic fixture, with paths relative to the fixture directory.
    pub fn for_fixture() -> Self {
        use crate::sae::ActivationKind;
        use crate::synthetic::{FIXTURE_CORPUS, FIXTURE_EMBEDDINGS, FIXTURE_VOCAB, FIXTURE_WORD_VECTORS};
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            data: DataConfig {
                embeddings: FIXTURE_EMBEDDINGS.into(),
                corpus: FIXTURE_CORPUS.into(),
                vocab: FIXTURE_VOCAB.into(),
                word_vectors: Some(FIXTURE_WORD_VECTORS.into()),
            },
            sae: SaeStage {
                checkpoint: None,
                train: TrainConfig {
                    activation: ActivationKind::TopK,
                    expansion_factor: 1,
                    batch_size: 256,
                    steps: 3000,
                    learning_rate: 0.005,
                    k_active: 2,
                    dead_feature_window: 100,
                    ..Default::default()
                },
            },
            interpret: InterpretConfig { steps: 1500, ..Default::default() },
            merge: MergeStage { k_prime: vec![16, 4], min_prior: 0.005, ..Default::default() },
            eval: EvalStage {
                judge: JudgeSpec { stub: StubJudge::Oracle, ..Default::default() },
                ..Default::default()
            },
            stats: StatsStage::default(),
        }
    }

    fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            trials_per_topic: self.eval.trials_per_topic,
            rating_samples: self.eval.rating_samples,
            concurrency: self.eval.concurrency,
            seed: self.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, p) in [("embeddings", &self.data.embeddings), ("corpus", &self.data.corpus), ("vocab", &self.data.vocab)] {
            if p.as_os_str().is_empty() {
                return bad(format!("data.{name} is required"));
            }
        }
        if self.merge.k_prime.is_empty() || self.merge.k_prime.contains(&0) {
            return bad("merge.k_prime must list positive topic counts".into());
        }
        if !(self.merge.top_p > 0.0 && self.merge.top_p <= 1.0) {
            return bad(format!("merge.top_p = {} must lie in (0, 1]", self.merge.top_p));
        }
        if !(self.merge.min_prior >= 0.0 && self.merge.min_prior < 1.0) {
            return bad(format!("merge.min_prior = {} must lie in [0, 1)", self.merge.min_prior));
        }
        if self.merge.points == PointSource::WordVectors && self.data.word_vectors.is_none() {
            return bad("merge.points = \"word_vectors\" needs data.word_vectors".into());
        }
        if self.eval.enabled && (self.eval.trials_per_topic == 0 || self.eval.concurrency == 0) {
            return bad("eval.trials_per_topic and eval.concurrency must be positive".into());
        }
        self.interpret.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ran,
    Cached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    pub input_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<StageRecord>,
}

impl PipelineSummary {
    pub fn status(&self, stage: &str) -> Option<StageStatus> {
        self.stages.iter().find(|r| r.stage == stage).map(|r| r.status)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct LogEntry {
    input: String,
    outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct HashLog {
    stages: BTreeMap<String, LogEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Hash of an embedding file together with its id sidecar.
fn embedding_hash(path: &Path) -> std::io::Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(path)?);
    let side = io::sidecar_path(path);
    if side.exists() {
        h.update(b"\0ids\0");
        h.update(fs::read(side)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn input_hash(parts: serde_json::Value) -> String {
    sha256_hex(parts.to_string().as_bytes())
}

pub fn load_word_vectors(path: &Path, vocab: &[String]) -> StageResult<WordEmbeddingTable> {
    let f = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(WordEmbeddingTable::from_text(std::io::BufReader::new(f), vocab)?)
}

pub fn topics_file(k: usize) -> String {
    format!("topics_k{k}.json")
}

pub fn model_file(k: usize) -> String {
    format!("topics_k{k}.model.json")
}

pub fn eval_file(k: usize) -> String {
    format!("eval_k{k}.json")
}

/// Group label per document; `"all"` when the corpus has no groups and
/// `"ungrouped"` for documents missing one in a grouped corpus.
pub fn document_groups(records: &[CorpusRecord]) -> (Vec<String>, Vec<String>) {
    let any = records.iter().any(|r| r.group.is_some());
    let labels: Vec<String> = records
        .iter()
        .map(|r| match (&r.group, any) {
            (Some(g), _) => g.clone(),
            (None, true) => "ungrouped".into(),
            (None, false) => "all".into(),
        })
        .collect();
    let mut groups: Vec<String> = Vec::new();
    for l in &labels {
        if !groups.contains(l) {
            groups.push(l.clone());
        }
    }
    (labels, groups)
}

pub fn stats_json(stats: &GroupStats, top: &[usize]) -> String {
    let v = serde_json::json!({
        "groups": stats.groups,
        "group_sizes": stats.group_sizes,
        "variance": stats.variance,
        "macro_ratio": stats.macro_ratio,
        "over_active": stats.over_active,
        "top_variance_topics": top,
    });
    serde_json::to_string_pretty(&v).expect("serialisable") + "\n"
}

pub fn stats_files(k: usize) -> [String; 4] {
    [
        format!("activity_k{k}.csv"),
        format!("topic_variance_k{k}.csv"),
        format!("activity_k{k}.svg"),
        format!("stats_k{k}.json"),
    ]
}

/// Writes the CSVs, bar chart and JSON summary of one topic model's activity statistics.
pub fn write_stats(
    dir: &Path,
    k: usize,
    st: &GroupStats,
    tm: &TopicModel,
    vocab: &[String],
    top_n: usize,
) -> std::result::Result<Vec<usize>, IoError> {
    let files = stats_files(k);
    let top = top_variance_topics(st, top_n);
    let names: Vec<String> = top
        .iter()
        .map(|&t| {
            crate::interpret::top_words(ndarray::ArrayView1::from(&tm.topics[t].word_dist), 3)
                .into_iter()
                .map(|(w, _)| vocab.get(w as usize).cloned().unwrap_or_else(|| w.to_string()))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    atomic_write(&dir.join(&files[0]), st.activity_csv().as_bytes())?;
    atomic_write(&dir.join(&files[1]), st.topic_csv().as_bytes())?;
    atomic_write(&dir.join(&files[2]), activity_svg(st, &top, &names).as_bytes())?;
    atomic_write(&dir.join(&files[3]), stats_json(st, &top).as_bytes())?;
    Ok(top)
}

struct Runner {
    out: PathBuf,
    log: HashLog,
    records: Vec<StageRecord>,
}

impl Runner {
    fn open(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| PipelineError::Config(format!("{}: {e}", out.display())))?;
        let path = out.join(HASH_LOG);
        let log = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_else(|e| {
                log::warn!("ignoring unreadable hash log {}: {e}", path.display());
                HashLog::default()
            }),
            Err(_) => HashLog::default(),
        };
        Ok(Self { out: out.to_path_buf(), log, records: Vec::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn up_to_date(&self, stage: &str, input: &str) -> bool {
        let Some(e) = self.log.stages.get(stage) else { return false };
        e.input == input
            && e.outputs.iter().all(|(f, h)| file_hash(&self.path(f)).map(|x| &x == h).unwrap_or(false))
    }

    /// Runs `f` unless the stage is up to date. `f` writes `outputs` into the output directory.
    fn stage(
        &mut self,
        stage: &str,
        input: String,
        outputs: &[String],
        f: impl FnOnce(&Path) -> StageResult<()>,
    ) -> Result<StageStatus> {
        let status = if self.up_to_date(stage, &input) {
            log::info!("stage {stage}: cached");
            StageStatus::Cached
        } else {
            log::info!("stage {stage}: running");
            let fail = |message: String| PipelineError::Stage { stage: stage.into(), message };
            f(&self.out).map_err(|e| fail(e.to_string()))?;
            let mut hashes = BTreeMap::new();
            for o in outputs {
                let h = file_hash(&self.path(o)).map_err(|e| fail(format!("missing output {o}: {e}")))?;
                hashes.insert(o.clone(), h);
            }
            self.log.stages.insert(stage.into(), LogEntry { input: input.clone(), outputs: hashes });
            let bytes = serde_json::to_string_pretty(&self.log).expect("serialisable") + "\n";
            atomic_write(&self.path(HASH_LOG), bytes.as_bytes()).map_err(|e| fail(e.to_string()))?;
            StageStatus::Ran
        };
        self.records.push(StageRecord { stage: stage.into(), status, input_hash: input });
        Ok(status)
    }

    fn output_hash(&self, stage: &str, file: &str) -> String {
        self.log.stages[stage].outputs[file].clone()
    }

    fn finish(self) -> Result<PipelineSummary> {
        let line = serde_json::to_string(&serde_json::json!({ "stages": self.records })).expect("serialisable");
        let path = self.path(RUN_LOG);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        writeln!(f, "{line}").map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Ok(PipelineSummary { out_dir: self.out, stages: self.records })
    }
}

pub fn run_pipeline_file(path: &Path) -> Result<PipelineSummary> {
    run_pipeline(&PipelineConfig::load(path)?)
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary> {
    let cfg = config.seeded();
    cfg.validate()?;
    let ds = Dataset::ingest(&cfg.data.embeddings, &cfg.data.corpus, &cfg.data.vocab)?;
    let hash_input = |p: &Path| -> Result<String> {
        embedding_hash(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))
    };
    let emb_hash = hash_input(&cfg.data.embeddings)?;
    let corpus_hash = hash_input(&cfg.data.corpus)?;
    let vocab_hash = hash_input(&cfg.data.vocab)?;
    let wv_hash = cfg.data.word_vectors.as_deref().map(hash_input).transpose()?;
    if cfg.sae.checkpoint.is_none() {
        cfg.sae.train.validate(ds.embeddings.ncols()).map_err(|e| PipelineError::Config(e.to_string()))?;
    }

    let mut run = Runner::open(&cfg.out_dir)?;

    // SAE: a supplied checkpoint is used in place; otherwise train and store.
    let ckpt_path = match &cfg.sae.checkpoint {
        Some(p) => p.clone(),
        None => {
            let input = input_hash(serde_json::json!({"stage": "sae", "embeddings": emb_hash, "train": cfg.sae.train}));
            let train_cfg = cfg.sae.train.clone();
            let x = ds.embeddings.view();
            run.stage("sae", input, &[CHECKPOINT_FILE.into()], |out| {
                let outcome = train(x, train_cfg)?;
                save_checkpoint(&outcome.model, &out.join(CHECKPOINT_FILE))?;
                Ok(())
            })?;
            run.path(CHECKPOINT_FILE)
        }
    };
    let stage_err = |stage: &str, e: &dyn std::fmt::Display| PipelineError::Stage { stage: stage.into(), message: e.to_string() };
    let ckpt_hash = file_hash(&ckpt_path).map_err(|e| stage_err("sae", &e))?;
    let model = load_checkpoint(&ckpt_path).map_err(|e| stage_err("sae", &e))?;
    if model.d_in() != ds.embeddings.ncols() {
        return Err(PipelineError::Input(IoError::Align(format!(
            "checkpoint expects dimension {} but embeddings have {}",
            model.d_in(),
            ds.embeddings.ncols()
        ))));
    }
    let mut acts: Option<Activations> = None;
    let encode = |acts: &mut Option<Activations>, model: &SaeModel| -> StageResult<()> {
        if acts.is_none() {
            *acts = Some(model.encode_inference(ds.embeddings.view())?);
        }
        Ok(())
    };

    let input = input_hash(serde_json::json!({
        "stage": "interpret", "checkpoint": ckpt_hash, "embeddings": emb_hash,
        "corpus": corpus_hash, "vocab": vocab_hash, "config": cfg.interpret,
    }));
    run.stage("interpret", input, &[EMISSIONS_FILE.into(), EMISSION_SUMMARY_FILE.into()], |out| {
        encode(&mut acts, &model)?;
        let em = learn_emissions(&ds.corpus, acts.as_ref().expect("encoded"), &cfg.interpret)?;
        save_emissions(&em, &out.join(EMISSIONS_FILE))?;
        let reloaded = load_emissions(&out.join(EMISSIONS_FILE))?;
        let summary = emission_summary_json(&reloaded, Some(&ds.vocab), SUMMARY_WORDS);
        atomic_write(&out.join(EMISSION_SUMMARY_FILE), summary.as_bytes())?;
        Ok(())
    })?;
    let em_hash = run.output_hash("interpret", EMISSIONS_FILE);
    let em = load_emissions(&run.path(EMISSIONS_FILE)).map_err(|e| stage_err("interpret", &e))?;

    let use_words = match cfg.merge.points {
        PointSource::Auto => cfg.data.word_vectors.is_some(),
        PointSource::WordVectors => true,
        PointSource::Decoder => false,
    };
    let mut table: Option<WordEmbeddingTable> = None;
    if let Some(p) = &cfg.data.word_vectors {
        table = Some(load_word_vectors(p, &ds.vocab).map_err(|e| PipelineError::Config(e.to_string()))?);
    }
    let input = input_hash(serde_json::json!({
        "stage": "embed", "emissions": em_hash,
        "source": if use_words { serde_json::json!({"word_vectors": wv_hash, "top_p": cfg.merge.top_p}) }
                  else { serde_json::json!({"decoder": ckpt_hash}) },
        "min_prior": cfg.merge.min_prior,
    }));
    let points_side = io::sidecar_path(Path::new(POINTS_FILE)).display().to_string();
    run.stage("embed", input, &[POINTS_FILE.into(), points_side], |out| {
        let r = if use_words {
            Remerger::from_word_embeddings(&em, table.as_ref().expect("validated"), cfg.merge.top_p)?
        } else {
            Remerger::from_decoder(&em, model.feature_directions().view())?
        };
        let r = r.drop_rare(&em, cfg.merge.min_prior);
        let ids: Vec<String> = r.retained_features().iter().map(usize::to_string).collect();
        io::save_embeddings(&out.join(POINTS_FILE), r.points().view(), Some(&ids))?;
        Ok(())
    })?;
    let points_hash = run.output_hash("embed", POINTS_FILE);
    let remerger = {
        let (points, ids) = io::load_embeddings(&run.path(POINTS_FILE))?;
        let features = ids
            .unwrap_or_default()
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| stage_err("embed", &e))?;
        let mut r = Remerger::from_points(features, points, em.n_features()).map_err(|e| stage_err("embed", &e))?;
        r.kmeans = cfg.merge.kmeans;
        r
    };

    let judge = cfg.eval.judge.build();
    let eval_cfg = cfg.eval_config();
    let mut report_rows = Vec::new();
    for &k in &cfg.merge.k_prime {
        let stage = format!("merge_k{k}");
        let input = input_hash(serde_json::json!({
            "stage": "merge", "k": k, "seed": cfg.seed, "points": points_hash,
            "emissions": em_hash, "kmeans": cfg.merge.kmeans,
        }));
        run.stage(&stage, input, &[topics_file(k), model_file(k)], |out| {
            let mut tm = remerger.merge(&em, k, cfg.seed)?;
            tm.emission_hash = Some(em_hash.clone());
            atomic_write(&out.join(model_file(k)), serde_json::to_string(&tm)?.as_bytes())?;
            atomic_write(&out.join(topics_file(k)), (tm.to_json(Some(&ds.vocab), SUMMARY_WORDS) + "\n").as_bytes())?;
            Ok(())
        })?;
        let model_hash = run.output_hash(&stage, &model_file(k));
        let tm: TopicModel = serde_json::from_slice(
            &fs::read(run.path(&model_file(k))).map_err(|e| stage_err(&stage, &e))?,
        )
        .map_err(|e| stage_err(&stage, &e))?;

        let mut row = serde_json::json!({ "k_prime": k, "n_topics": tm.topics.len() });
        if cfg.eval.enabled {
            let stage = format!("eval_k{k}");
            let mut outputs = vec![eval_file(k)];
            if cfg.eval.classify_categories {
                outputs.push(format!("categories_k{k}.json"));
            }
            let input = input_hash(serde_json::json!({
                "stage": "eval", "model": model_hash, "vocab": vocab_hash, "word_vectors": wv_hash,
                "judge": cfg.eval.judge, "config": eval_cfg, "classify": cfg.eval.classify_categories,
            }));
            run.stage(&stage, input, &outputs, |out| {
                let rep = evaluate(&tm, &ds.vocab, table.as_ref(), judge.as_ref(), &eval_cfg)?;
                atomic_write(&out.join(eval_file(k)), (serde_json::to_string_pretty(&rep)? + "\n").as_bytes())?;
                if cfg.eval.classify_categories {
                    let cats = classify_topics(&tm, &ds.vocab, judge.as_ref(), eval_cfg.concurrency)?;
                    let json = serde_json::to_string_pretty(&cats)? + "\n";
                    atomic_write(&out.join(format!("categories_k{k}.json")), json.as_bytes())?;
                }
                Ok(())
            })?;
            let rep: serde_json::Value = serde_json::from_slice(
                &fs::read(run.path(&eval_file(k))).map_err(|e| stage_err(&stage, &e))?,
            )
            .map_err(|e| stage_err(&stage, &e))?;
            for key in ["c_i", "c_r", "diversity"] {
                row[key] = rep[key].clone();
            }
        }
        if cfg.stats.enabled {
            let stage = format!("stats_k{k}");
            let files = stats_files(k);
            let input = input_hash(serde_json::json!({
                "stage": "stats", "model": model_hash, "checkpoint": ckpt_hash, "embeddings": emb_hash,
                "corpus": corpus_hash, "config": cfg.stats,
            }));
            run.stage(&stage, input, &files, |out| {
                encode(&mut acts, &model)?;
                let (labels, groups) = document_groups(&ds.records);
                let st = topic_activity(acts.as_ref().expect("encoded"), &tm, &labels, &groups, cfg.stats.over_active_threshold)?;
                write_stats(out, k, &st, &tm, &ds.vocab, cfg.stats.top_n)?;
                Ok(())
            })?;
            let st: serde_json::Value = serde_json::from_slice(
                &fs::read(run.path(&files[3])).map_err(|e| stage_err(&stage, &e))?,
            )
            .map_err(|e| stage_err(&stage, &e))?;
            row["top_variance_topics"] = st["top_variance_topics"].clone();
            row["over_active_topics"] = serde_json::json!(st["over_active"]
                .as_array()
                .map(|a| a.iter().filter(|v| v.as_bool() == Some(true)).count())
                .unwrap_or(0));
        }
        report_rows.push(row);
    }

    let report = serde_json::json!({
        "seed": cfg.seed,
        "n_docs": ds.records.len(),
        "vocab_size": ds.vocab.len(),
        "n_features": em.n_features(),
        "clustered_features": remerger.retained_features().len(),
        "emission_hash": em_hash,
        "topics": report_rows,
    });
    let text = serde_json::to_string_pretty(&report).expect("serialisable") + "\n";
    atomic_write(&run.path(REPORT_FILE), text.as_bytes())?;
    run.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let cfg = PipelineConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
        assert!(matches!(PipelineConfig::from_toml("sede = 1"), Err(PipelineError::Config(_))));
    }

    #[test]
    fn judge_spec_parses_from_toml() {
        let cfg = PipelineConfig::from_toml("[eval.judge]\nbackend = \"stub\"\nstub = { kind = \"fixed\", score = 50.0 }\n").unwrap();
        assert_eq!(cfg.eval.judge.stub, StubJudge::Fixed { score: 50.0 });
    }

    #[test]
    fn global_seed_overrides_stage_seeds() {
        let cfg = PipelineConfig { seed: 9, ..Default::default() }.seeded();
        assert_eq!((cfg.sae.train.seed, cfg.interpret.seed), (9, 9));
        assert_eq!(cfg.eval.judge.stub, StubJudge::UniformRandom { seed: 9 });
    }

    #[test]
    fn validation_errors_are_not_stage_failures() {
        let mut cfg = PipelineConfig::default();
        assert!(run_pipeline(&cfg).unwrap_err().is_validation());
        cfg.data = DataConfig { embeddings: "a".into(), corpus: "b".into(), vocab: "c".into(), word_vectors: None };
        cfg.merge.k_prime = vec![];
        assert!(matches!(run_pipeline(&cfg), Err(PipelineError::Config(_))));
    }
}
