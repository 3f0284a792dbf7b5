//! The `pearlkit` command line.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 checkpoint format or
//! model mismatch, 4 numeric failure during training.
//!
//! Every command that writes an artifact also writes `<artifact>.manifest.json`
//! with the parsed flags, input digests and timestamps. `pearlkit rerun
//! <manifest>` re-executes the recorded command after checking that the
//! inputs still hash to the recorded digests.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{AugmentConfig, AugmentLevel, AugmentResources, Augmenter, KeyboardLayout, ParaphraseTable, SynonymSource};
use crate::corpus::Corpus;
use crate::encoder::{EncoderConfig, ModelState};
use crate::error::{Error, Result};
use crate::evalharness::{self as eval, ProbeConfig, SearchMode};
use crate::mining::{HardNegativeIndex, MiningConfig};
use crate::trainer::{self, TrainConfig, TrainOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser, Serialize)]
#[command(name = "pearlkit", version, about = "Train and evaluate compact phrase embeddings")]
pub struct Cli {
    /// Worker threads for parallel sections (default: available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Write one augmented positive per corpus phrase.
    Augment(AugmentArgs),
    /// Mine hard negatives from a corpus.
    Mine(MineArgs),
    /// Train an encoder and write the weight-averaged checkpoint.
    Train(TrainArgs),
    /// Encode phrases, one per line, into vectors.
    Embed(EmbedArgs),
    /// Run one evaluation task.
    Eval(EvalArgs),
    /// Interpolate two checkpoints.
    Avg(AvgArgs),
    /// Re-execute the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "char,token,phrase")]
    pub levels: Vec<AugmentLevel>,
    /// Synonym lexicon, `word<TAB>synonym` per line.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Paraphrase table, `phrase<TAB>paraphrase` per line.
    #[arg(long)]
    pub paraphrases: Option<PathBuf>,
    /// Keyboard adjacency map as JSON (default: QWERTY).
    #[arg(long)]
    pub keyboard: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub synonym_threshold: f64,
    #[arg(long)]
    pub coerce_unknown: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct MineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Scoring checkpoint; a fresh encoder seeded from `--seed` when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub dmax: usize,
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,
    #[arg(long, default_value_t = 10)]
    pub k_store: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub coerce_unknown: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Hard-negative TSV from `mine`; no hard negatives when absent.
    #[arg(long)]
    pub hardneg: Option<PathBuf>,
    /// JSON training config; flags given here override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// JSONL loss log (default: `<out>.log.jsonl`).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Also save the pre-averaging weights with optimizer state.
    #[arg(long)]
    pub finetuned: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long)]
    pub paraphrases: Option<PathBuf>,
    #[arg(long)]
    pub coerce_unknown: bool,

    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_multiplier: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub hard_negatives: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<AugmentLevel>>,
    #[arg(long)]
    pub no_type_loss: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Paraphrase,
    Similarity,
    Turney,
    Retrieval,
    Clustering,
    Fuzzyjoin,
}

impl Task {
    pub fn files(self) -> &'static [&'static str] {
        match self {
            Task::Paraphrase => &["train.tsv", "dev.tsv", "test.tsv"],
            Task::Similarity => &["bird.tsv"],
            Task::Turney => &["turney.tsv"],
            Task::Retrieval => &["dictionary.txt", "queries.tsv"],
            Task::Clustering => &["items.tsv"],
            Task::Fuzzyjoin => &["left.txt", "right.txt", "gold.tsv"],
        }
    }

    fn metric(self) -> &'static str {
        match self {
            Task::Similarity => "pearson",
            Task::Clustering => "nmi",
            _ => "accuracy",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Task::Paraphrase => "paraphrase",
            Task::Similarity => "similarity",
            Task::Turney => "turney",
            Task::Retrieval => "retrieval",
            Task::Clustering => "clustering",
            Task::Fuzzyjoin => "fuzzyjoin",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Retrieval only: rank this many trigram-prefiltered candidates
    /// instead of the whole dictionary.
    #[arg(long)]
    pub prefilter: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AvgArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

/// Provenance written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub version: String,
    pub seed: Option<u64>,
    /// sha256 of every input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

struct Run {
    argv: Vec<String>,
    config: serde_json::Value,
    started: u128,
    inputs: BTreeMap<String, String>,
}

impl Run {
    fn new(argv: Vec<String>, cmd: &Command) -> Result<Self> {
        Ok(Run {
            argv,
            config: serde_json::to_value(cmd)?,
            started: now_ms(),
            inputs: BTreeMap::new(),
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path).map_err(|e| match e {
            Error::Io(io) => Error::invalid(format!("{}: {io}", path.display())),
            other => other,
        })?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    fn manifest(&self, command: &str, seed: Option<u64>, outputs: &[&Path]) -> Result<RunManifest> {
        let outputs = outputs
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            command: command.into(),
            argv: self.argv.clone(),
            config: self.config.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            inputs: self.inputs.clone(),
            outputs,
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        })
    }

    fn finish(&self, command: &str, seed: Option<u64>, primary: &Path, outputs: &[&Path]) -> Result<RunManifest> {
        let manifest = self.manifest(command, seed, outputs)?;
        fs::write(manifest_path(primary), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric { .. } | Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Format(_) | Error::Mismatch(_) => EXIT_FORMAT,
        _ => EXIT_INPUT,
    }
}

/// Parse `args` (program name first) and run the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("--threads ignored: {e}");
        }
    }
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(argv, &cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Numeric { dump: Some(path), .. } = &e {
                eprintln!("failing batch written to {}", path.display());
            }
            exit_code(&e)
        }
    }
}

/// Entry point for the binary: sets up logging from `PEARLKIT_LOG`.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("PEARLKIT_LOG", "info")).try_init();
    run(std::env::args_os())
}

fn execute(argv: Vec<String>, cmd: &Command) -> Result<()> {
    let mut run = Run::new(argv, cmd)?;
    match cmd {
        Command::Augment(a) => cmd_augment(&mut run, a),
        Command::Mine(a) => cmd_mine(&mut run, a),
        Command::Train(a) => cmd_train(&mut run, a),
        Command::Embed(a) => cmd_embed(&mut run, a),
        Command::Eval(a) => cmd_eval(&mut run, a),
        Command::Avg(a) => cmd_avg(&mut run, a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn load_model(run: &mut Run, path: &Path) -> Result<ModelState> {
    run.input(path)?;
    ModelState::load(path)
}

fn load_corpus(run: &mut Run, path: &Path, coerce_unknown: bool) -> Result<Corpus> {
    run.input(path)?;
    Corpus::load(path, coerce_unknown)
}

fn load_resources(run: &mut Run, lexicon: Option<&Path>, paraphrases: Option<&Path>) -> Result<AugmentResources> {
    let mut resources = AugmentResources::default();
    if let Some(p) = lexicon {
        run.input(p)?;
        resources.synonyms = SynonymSource::load(p)?;
    }
    if let Some(p) = paraphrases {
        run.input(p)?;
        resources.paraphrases = ParaphraseTable::load(p)?;
    }
    Ok(resources)
}

fn cmd_augment(run: &mut Run, a: &AugmentArgs) -> Result<()> {
    let corpus = load_corpus(run, &a.input, a.coerce_unknown)?;
    let resources = load_resources(run, a.lexicon.as_deref(), a.paraphrases.as_deref())?;
    let mut config = AugmentConfig::new(a.seed).with_levels(a.levels.iter().copied());
    config.synonym_threshold = a.synonym_threshold;
    if let Some(p) = &a.keyboard {
        run.input(p)?;
        config.keyboard_layout = KeyboardLayout::load(p)?;
    }
    let augmenter = Augmenter::new(config, resources)?;
    let mut out = String::new();
    for (i, phrase) in corpus.surfaces().enumerate() {
        let positive = augmenter.augment_at(phrase, i as u64)?;
        out.push_str(phrase);
        out.push('\t');
        out.push_str(&positive);
        out.push('\n');
    }
    fs::write(&a.out, out)?;
    info!("wrote {} pairs to {}", corpus.len(), a.out.display());
    run.finish("augment", Some(a.seed), &a.out, &[&a.out])?;
    Ok(())
}

fn cmd_mine(run: &mut Run, a: &MineArgs) -> Result<()> {
    let corpus = load_corpus(run, &a.input, a.coerce_unknown)?;
    let config = MiningConfig {
        d_max: a.dmax,
        theta: a.theta,
        k_store: a.k_store,
    };
    config.validate()?;
    let model = match &a.model {
        Some(p) => load_model(run, p)?,
        None => ModelState::init(EncoderConfig::default(), a.seed)?,
    };
    let phrases: Vec<&str> = corpus.surfaces().collect();
    let index = HardNegativeIndex::build(&phrases, &model, &config)?;
    index.verify(&config)?;
    index.save(&a.out)?;
    info!(
        "{} phrases with hard negatives, {} pairs, written to {}",
        index.len(),
        index.pair_count(),
        a.out.display()
    );
    run.finish("mine", Some(a.seed), &a.out, &[&a.out])?;
    Ok(())
}

/// Flags over file over defaults.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.lr_multiplier {
        cfg.lr_multiplier = v;
    }
    if let Some(v) = a.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = a.hard_negatives {
        cfg.hard_negatives_per_batch = v;
    }
    if let Some(v) = a.alpha {
        cfg.weight_average_alpha = v;
    }
    if let Some(v) = a.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = &a.levels {
        cfg.augment_levels = v.clone();
    }
    if a.no_type_loss {
        cfg.type_loss = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(run: &mut Run, a: &TrainArgs) -> Result<()> {
    if let Some(p) = &a.config {
        run.input(p)?;
    }
    let cfg = resolve_train_config(a)?;
    let corpus = load_corpus(run, &a.corpus, a.coerce_unknown)?;
    let hard_negatives = match &a.hardneg {
        Some(p) => {
            run.input(p)?;
            HardNegativeIndex::load(p)?
        }
        None => HardNegativeIndex::default(),
    };
    let resources = load_resources(run, a.lexicon.as_deref(), a.paraphrases.as_deref())?;
    let initial = a.init.as_deref().map(|p| load_model(run, p)).transpose()?;
    if let Some(dir) = &a.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let dump_dir = a
        .out
        .parent()
        .map(|p| if p.as_os_str().is_empty() { Path::new(".") } else { p })
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let opts = TrainOptions {
        checkpoint_dir: a.checkpoint_dir.clone(),
        dump_dir: Some(dump_dir),
        initial,
    };
    info!(
        "training on {} phrases, {} epochs of batch {}",
        corpus.len(),
        cfg.epochs,
        cfg.batch_size
    );
    let output = trainer::train(&corpus, &hard_negatives, resources, &cfg, &opts)?;
    output.model.save(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".log.jsonl");
        PathBuf::from(s)
    });
    fs::write(&log_path, trainer::log_to_jsonl(&output.log))?;
    let mut outputs: Vec<&Path> = vec![&a.out, &log_path];
    if let Some(p) = &a.finetuned {
        output.finetuned.save(p)?;
        outputs.push(p);
    }
    if let Some(last) = output.log.last() {
        info!("final loss {:.5} after {} steps", last.loss_total, last.step + 1);
    }
    run.config = serde_json::json!({ "flags": run.config, "resolved": cfg });
    run.finish("train", Some(cfg.seed), &a.out, &outputs)?;
    Ok(())
}

fn cmd_embed(run: &mut Run, a: &EmbedArgs) -> Result<()> {
    let model = load_model(run, &a.model)?;
    run.input(&a.input)?;
    let text = fs::read_to_string(&a.input)?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let phrase = line.trim();
        if phrase.is_empty() {
            warn!("{}:{}: empty line skipped", a.input.display(), i + 1);
            continue;
        }
        let v = model.encode(phrase)?;
        out.push_str(&eval::format_vector_line(phrase, &v));
        out.push('\n');
    }
    fs::write(&a.out, out)?;
    run.finish("embed", None, &a.out, &[&a.out])?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
    pub manifest: RunManifest,
}

fn cmd_eval(run: &mut Run, a: &EvalArgs) -> Result<()> {
    let expected = a.task.files();
    let missing: Vec<&str> = expected.iter().copied().filter(|f| !a.data.join(f).is_file()).collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "{} task needs {} in {} (missing: {})",
            a.task.name(),
            expected.join(", "),
            a.data.display(),
            missing.join(", ")
        )));
    }
    let model = load_model(run, &a.model)?;
    let file = |name: &str| a.data.join(name);
    for name in expected {
        run.input(&file(name))?;
    }
    let (value, n) = match a.task {
        Task::Paraphrase => {
            let train = eval::load_pairs(file("train.tsv"))?;
            let dev = eval::load_pairs(file("dev.tsv"))?;
            let test = eval::load_pairs(file("test.tsv"))?;
            let acc = eval::eval_paraphrase(&train, &dev, &test, &model, &ProbeConfig::default(), a.seed)?;
            (acc, test.len())
        }
        Task::Similarity => {
            let pairs = eval::load_pairs(file("bird.tsv"))?;
            (eval::eval_similarity(&pairs, &model)?, pairs.len())
        }
        Task::Turney => {
            let items = eval::parse_turney(&fs::read_to_string(file("turney.tsv"))?)?;
            (eval::eval_turney(&items, &model)?, items.len())
        }
        Task::Retrieval => {
            let task = eval::RetrievalTask::load(file("dictionary.txt"), file("queries.tsv"))?;
            let mode = match a.prefilter {
                Some(candidates) => SearchMode::Prefilter { candidates },
                None => SearchMode::Exact,
            };
            (eval::eval_retrieval(&task, &model, mode)?.accuracy, task.queries.len())
        }
        Task::Clustering => {
            let task = eval::ClusteringTask::load(file("items.tsv"))?;
            (eval::eval_clustering(&task, &model, a.seed)?, task.items.len())
        }
        Task::Fuzzyjoin => {
            let task = eval::FuzzyJoinTask::load(file("left.txt"), file("right.txt"), file("gold.tsv"))?;
            (eval::eval_fuzzyjoin(&task, &model)?, task.right.len())
        }
    };
    info!("{} {} = {value:.4} over {n} items", a.task.name(), a.task.metric());
    let report = EvalReport {
        task: a.task,
        metric: a.task.metric().into(),
        value,
        n,
        seed: a.seed,
        manifest: run.manifest("eval", Some(a.seed), &[])?,
    };
    fs::write(&a.out, serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_avg(run: &mut Run, a: &AvgArgs) -> Result<()> {
    let original = load_model(run, &a.a)?;
    let finetuned = load_model(run, &a.b)?;
    trainer::average_weights(&original, &finetuned, a.alpha)?.save(&a.out)?;
    run.finish("avg", None, &a.out, &[&a.out])?;
    Ok(())
}

fn cmd_rerun(a: &RerunArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.manifest)?;
    for (path, digest) in &manifest.inputs {
        let now = sha256_file(path).map_err(|e| Error::invalid(format!("{path}: {e}")))?;
        if &now != digest {
            return Err(Error::invalid(format!("{path} changed since the recorded run")));
        }
    }
    let cli = Cli::try_parse_from(&manifest.argv).map_err(|e| Error::invalid(format!("recorded argv: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::invalid("a manifest cannot point at another rerun"));
    }
    execute(manifest.argv.clone(), &cli.command)?;
    for (path, digest) in &manifest.outputs {
        if &sha256_file(path)? != digest {
            return Err(Error::Mismatch(format!("{path} differs from the recorded output")));
        }
    }
    info!("{} outputs reproduced", manifest.outputs.len());
    Ok(())
}
