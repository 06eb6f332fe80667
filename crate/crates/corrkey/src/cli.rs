//! Command-line surface: `vocab`, `train`, `predict`, `eval` and
//! `gradcheck`, configured by an optional TOML file with flag overrides
//! (flags > file > defaults). Every output artifact embeds the resolved
//! config, code version, seed and vocabulary hash, so identical runs are
//! byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::beam::{generate_keyphrases, GenerationConfig};
use crate::checkpoint;
use crate::corpus::{self, Document, TrainingInstance, Vocab};
use crate::metrics;
use crate::model::MechanismMode;
use crate::training::{
    self, EpochStats, StepStats, TrainConfig, TrainError, TrainObserver, GRADCHECK_TOLERANCE,
};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit codes: 0 success, 2 usage, 3 data, 4 numeric failure.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<corpus::CorpusError> for CliError {
    fn from(e: corpus::CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<checkpoint::CheckpointError> for CliError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::NonFiniteLoss(_) | TrainError::NonFiniteGradient(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::Usage(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// config file

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub train: TrainSection,
    pub generate: GenSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f64>,
    pub clip: Option<f64>,
    pub dropout: Option<f64>,
    pub vocab_cap: Option<usize>,
    pub embed_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub attn_dim: Option<usize>,
    pub max_phrases: Option<usize>,
    pub max_source_len: Option<usize>,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSection {
    pub beam_size: Option<usize>,
    pub beam_depth: Option<usize>,
    pub num_phrases: Option<usize>,
    pub dedup_filter: Option<bool>,
    pub joint_beam: Option<bool>,
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Option<Vec<usize>>,
    pub alpha: Option<f64>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {}", p.display(), e)))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("bad config {}: {}", p.display(), e)))
        }
    }
}

fn parse_mode(s: &str) -> Result<MechanismMode, CliError> {
    MechanismMode::parse(s).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown mode {:?} (expected full, coverage_only, review_only or copy_only)",
            s
        ))
    })
}

// ---------------------------------------------------------------------------
// CLI definition

#[derive(Parser, Debug)]
#[command(
    name = "corrkey",
    version,
    about = "Correlated keyphrase generation: train, decode and evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build a vocabulary file from a JSONL corpus.
    Vocab(VocabArgs),
    /// Train a model and write best/last checkpoints plus a step log.
    Train(TrainArgs),
    /// Generate keyphrases for a JSONL corpus from a checkpoint.
    Predict(PredictArgs),
    /// Score a predictions file against gold keyphrases.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite and print the max error.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct VocabArgs {
    /// Corpus JSONL (title, abstract, keyphrases per line).
    #[arg(long)]
    data: PathBuf,
    /// Output vocabulary file (one token per line).
    #[arg(long)]
    out: PathBuf,
    /// Keep this many entries including the reserved block.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Validation corpus for early stopping (required).
    #[arg(long)]
    dev: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Directory receiving checkpoints and the step log.
    #[arg(long)]
    out_dir: PathBuf,
    /// Resume from this checkpoint (epoch granularity).
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    attn_dim: Option<usize>,
    #[arg(long)]
    max_phrases: Option<usize>,
    #[arg(long)]
    max_source_len: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// full, coverage_only, review_only or copy_only.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Decode-time mechanism gating; defaults to the checkpoint's mode.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    beam_depth: Option<usize>,
    /// Number of phrases to emit per document.
    #[arg(short = 'k', long)]
    num_phrases: Option<usize>,
    /// Apply the substring-duplicate post-filter.
    #[arg(long)]
    dedup: bool,
    /// Single-pass emission without state commits (experimental).
    #[arg(long)]
    joint_beam: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Predictions JSONL produced by `predict`.
    #[arg(long)]
    pred: PathBuf,
    /// Gold corpus JSONL.
    #[arg(long)]
    gold: PathBuf,
    /// Report JSON destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cutoffs, e.g. --ks 5,10.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Optional per-document CSV.
    #[arg(long)]
    per_doc: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

// ---------------------------------------------------------------------------
// merged, resolved configuration echoed into artifacts

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub generate: GenerationConfig,
    pub eval_ks: Vec<usize>,
    pub eval_alpha: f64,
}

fn resolve_train(file: &FileConfig, args: Option<&TrainArgs>) -> Result<TrainConfig, CliError> {
    let mut t = TrainConfig::default();
    let s = &file.train;
    if let Some(v) = s.lr {
        t.lr = v;
    }
    if let Some(v) = s.clip {
        t.clip = v;
    }
    if let Some(v) = s.dropout {
        t.dropout = v;
    }
    if let Some(v) = s.vocab_cap {
        t.vocab_cap = v;
    }
    if let Some(v) = s.embed_dim {
        t.embed_dim = v;
    }
    if let Some(v) = s.hidden_dim {
        t.hidden_dim = v;
    }
    if s.attn_dim.is_some() {
        t.attn_dim = s.attn_dim;
    }
    if let Some(v) = s.max_phrases {
        t.max_phrases = v;
    }
    if let Some(v) = s.max_source_len {
        t.max_source_len = v;
    }
    if let Some(v) = s.seed {
        t.seed = v;
    }
    if let Some(v) = s.max_epochs {
        t.max_epochs = v;
    }
    if let Some(v) = s.patience {
        t.patience = v;
    }
    if let Some(m) = &s.mode {
        t.mode = parse_mode(m)?;
    }
    if let Some(a) = args {
        if let Some(v) = a.lr {
            t.lr = v;
        }
        if let Some(v) = a.clip {
            t.clip = v;
        }
        if let Some(v) = a.dropout {
            t.dropout = v;
        }
        if let Some(v) = a.embed_dim {
            t.embed_dim = v;
        }
        if let Some(v) = a.hidden_dim {
            t.hidden_dim = v;
        }
        if a.attn_dim.is_some() {
            t.attn_dim = a.attn_dim;
        }
        if let Some(v) = a.max_phrases {
            t.max_phrases = v;
        }
        if let Some(v) = a.max_source_len {
            t.max_source_len = v;
        }
        if let Some(v) = a.seed {
            t.seed = v;
        }
        if let Some(v) = a.max_epochs {
            t.max_epochs = v;
        }
        if let Some(v) = a.patience {
            t.patience = v;
        }
        if let Some(m) = &a.mode {
            t.mode = parse_mode(m)?;
        }
    }
    if t.dropout < 0.0 || t.dropout >= 1.0 {
        return Err(CliError::Usage(format!(
            "dropout must lie in [0, 1), got {}",
            t.dropout
        )));
    }
    Ok(t)
}

fn resolve_generate(
    file: &FileConfig,
    default_mode: MechanismMode,
    args: Option<&PredictArgs>,
) -> Result<GenerationConfig, CliError> {
    let mut g = GenerationConfig {
        mode: default_mode,
        ..GenerationConfig::default()
    };
    let s = &file.generate;
    if let Some(v) = s.beam_size {
        g.beam_size = v;
    }
    if let Some(v) = s.beam_depth {
        g.beam_depth = v;
    }
    if let Some(v) = s.num_phrases {
        g.num_phrases = v;
    }
    if let Some(v) = s.dedup_filter {
        g.dedup_filter = v;
    }
    if let Some(v) = s.joint_beam {
        g.joint_beam = v;
    }
    if let Some(m) = &s.mode {
        g.mode = parse_mode(m)?;
    }
    if let Some(a) = args {
        if let Some(v) = a.beam_size {
            g.beam_size = v;
        }
        if let Some(v) = a.beam_depth {
            g.beam_depth = v;
        }
        if let Some(v) = a.num_phrases {
            g.num_phrases = v;
        }
        if a.dedup {
            g.dedup_filter = true;
        }
        if a.joint_beam {
            g.joint_beam = true;
        }
        if let Some(m) = &a.mode {
            g.mode = parse_mode(m)?;
        }
    }
    if g.beam_size == 0 || g.beam_depth == 0 || g.num_phrases == 0 {
        return Err(CliError::Usage(
            "beam_size, beam_depth and num_phrases must all be at least 1".into(),
        ));
    }
    Ok(g)
}

fn resolve_eval(file: &FileConfig, args: Option<&EvalArgs>) -> Result<(Vec<usize>, f64), CliError> {
    let mut ks = vec![5, 10];
    let mut alpha = 0.5;
    if let Some(v) = &file.eval.ks {
        ks = v.clone();
    }
    if let Some(v) = file.eval.alpha {
        alpha = v;
    }
    if let Some(a) = args {
        if let Some(v) = &a.ks {
            ks = v.clone();
        }
        if let Some(v) = a.alpha {
            alpha = v;
        }
    }
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(CliError::Usage("ks must be non-empty positive integers".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Usage(format!(
            "alpha must lie strictly between 0 and 1, got {}",
            alpha
        )));
    }
    Ok((ks, alpha))
}

// ---------------------------------------------------------------------------
// artifact metadata

#[derive(Debug, Serialize)]
struct ArtifactMeta<'a> {
    code_version: &'a str,
    seed: u64,
    vocab_hash: String,
    config: &'a ResolvedConfig,
}

fn vocab_hash_of(path: &Path) -> Result<u64, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read vocabulary {}: {}", path.display(), e)))?;
    Ok(checkpoint::fnv1a64(&bytes))
}

// ---------------------------------------------------------------------------
// subcommand bodies

fn build_instances(
    docs: &[Document],
    vocab: &Vocab,
    cfg: &TrainConfig,
    require_phrases: bool,
) -> Result<Vec<TrainingInstance>, CliError> {
    let mut out = Vec::new();
    for doc in docs {
        out.extend(corpus::make_instances(
            doc,
            vocab,
            cfg.max_phrases,
            cfg.max_source_len,
            require_phrases,
        )?);
    }
    if out.is_empty() {
        return Err(CliError::Data("corpus produced no usable instances".into()));
    }
    Ok(out)
}

fn cmd_vocab(args: &VocabArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let mut train_cfg = resolve_train(&file, None)?;
    if let Some(cap) = args.cap {
        train_cfg.vocab_cap = cap;
    }
    let docs = corpus::read_jsonl(&args.data)?;
    if docs.is_empty() {
        return Err(CliError::Data(format!(
            "empty corpus: {}",
            args.data.display()
        )));
    }
    let mut streams: Vec<Vec<String>> = Vec::new();
    for doc in &docs {
        let mut toks = corpus::preprocess_text(&doc.title);
        toks.extend(corpus::preprocess_text(&doc.abstract_text));
        for kp in &doc.keyphrases {
            toks.extend(corpus::preprocess_text(kp));
        }
        streams.push(toks);
    }
    if streams.iter().all(|s| s.is_empty()) {
        return Err(CliError::Data("corpus contains no tokens".into()));
    }
    let vocab = Vocab::build(streams.iter().map(|s| s.as_slice()), train_cfg.vocab_cap)?;
    vocab
        .save(&args.out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {}", args.out.display(), e)))?;

    let resolved = ResolvedConfig {
        train: train_cfg,
        generate: GenerationConfig::default(),
        eval_ks: vec![5, 10],
        eval_alpha: 0.5,
    };
    let meta = ArtifactMeta {
        code_version: CODE_VERSION,
        seed: resolved.train.seed,
        vocab_hash: format!("{:016x}", vocab_hash_of(&args.out)?),
        config: &resolved,
    };
    let meta_path = args.out.with_extension("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap())
        .map_err(|e| CliError::Data(format!("cannot write {}: {}", meta_path.display(), e)))?;
    eprintln!(
        "vocab: {} entries (cap {}) -> {}",
        vocab.len(),
        resolved.train.vocab_cap,
        args.out.display()
    );
    Ok(())
}

struct LogObserver {
    file: fs::File,
}

impl TrainObserver for LogObserver {
    fn on_step(&mut self, s: &StepStats) {
        let line = serde_json::json!({
            "step": s.step,
            "instance": s.instance_id,
            "loss": s.loss,
            "grad_norm": s.grad_norm,
            "clipped_norm": s.clipped_norm,
            "wall_ms": s.wall_ms,
        });
        let _ = writeln!(self.file, "{}", line);
    }
    fn on_epoch(&mut self, e: &EpochStats) {
        let line = serde_json::json!({
            "epoch": e.epoch,
            "mean_train_loss": e.mean_train_loss,
            "dev_loss": e.dev_loss,
        });
        let _ = writeln!(self.file, "{}", line);
        eprintln!(
            "epoch {}: train {:.4} dev {:.4}",
            e.epoch, e.mean_train_loss, e.dev_loss
        );
    }
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let train_cfg = resolve_train(&file, Some(args))?;
    let vocab = Vocab::load(&args.vocab)?;
    let vocab_hash = vocab_hash_of(&args.vocab)?;
    let docs = corpus::read_jsonl(&args.data)?;
    let dev_docs = corpus::read_jsonl(&args.dev)?;
    let data = build_instances(&docs, &vocab, &train_cfg, true)?;
    let dev = build_instances(&dev_docs, &vocab, &train_cfg, true)?;

    let model_cfg = train_cfg.model_config(vocab.len());
    let (store, completed_epochs) = match &args.resume {
        None => (model_cfg.init_params(train_cfg.seed), 0),
        Some(path) => {
            let ckpt = checkpoint::load(path)?;
            checkpoint::validate_shapes(&ckpt.store, &model_cfg)?;
            if ckpt.vocab_hash != vocab_hash {
                return Err(checkpoint::CheckpointError::VocabHashMismatch {
                    expected: ckpt.vocab_hash,
                    found: vocab_hash,
                }
                .into());
            }
            let epochs = (ckpt.store.step_count() as usize) / data.len();
            (ckpt.store, epochs)
        }
    };

    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {}", args.out_dir.display(), e)))?;
    let log_path = args.out_dir.join("train_log.jsonl");
    let mut observer = LogObserver {
        file: fs::File::create(&log_path)
            .map_err(|e| CliError::Data(format!("cannot write {}: {}", log_path.display(), e)))?,
    };

    let outcome = training::train_from(
        store,
        completed_epochs,
        &data,
        &dev,
        &train_cfg,
        &model_cfg,
        &mut observer,
    )?;

    let resolved = ResolvedConfig {
        train: train_cfg,
        generate: GenerationConfig::default(),
        eval_ks: vec![5, 10],
        eval_alpha: 0.5,
    };
    let echo = serde_json::to_string(&resolved).unwrap();
    let best_path = args.out_dir.join("checkpoint_best.bin");
    let last_path = args.out_dir.join("checkpoint_last.bin");
    checkpoint::save(&best_path, &outcome.best, &echo, vocab_hash)?;
    checkpoint::save(&last_path, &outcome.last, &echo, vocab_hash)?;
    eprintln!(
        "trained {} epochs; best dev loss {:.4} at epoch {}; checkpoints in {}",
        outcome.epochs_run,
        outcome.best_dev_loss,
        outcome.best_epoch,
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredLine {
    id: String,
    phrases: Vec<String>,
    scores: Vec<f64>,
    unfinished: Vec<bool>,
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let vocab = Vocab::load(&args.vocab)?;
    let vocab_hash = vocab_hash_of(&args.vocab)?;
    if ckpt.vocab_hash != vocab_hash {
        return Err(checkpoint::CheckpointError::VocabHashMismatch {
            expected: ckpt.vocab_hash,
            found: vocab_hash,
        }
        .into());
    }

    // model dims and default mode come from the checkpoint's config echo
    let echoed: ResolvedConfigEcho = serde_json::from_str(&ckpt.config_json)
        .map_err(|e| CliError::Data(format!("unreadable checkpoint config echo: {}", e)))?;
    let train_cfg = echoed.train;
    let model_cfg = train_cfg.model_config(vocab.len());
    checkpoint::validate_shapes(&ckpt.store, &model_cfg)?;

    let gen_cfg = resolve_generate(&file, train_cfg.mode, Some(args))?;

    let docs = corpus::read_jsonl(&args.data)?;
    if docs.is_empty() {
        return Err(CliError::Data(format!(
            "empty corpus: {}",
            args.data.display()
        )));
    }

    let resolved = ResolvedConfig {
        train: train_cfg.clone(),
        generate: gen_cfg.clone(),
        eval_ks: vec![5, 10],
        eval_alpha: 0.5,
    };
    let meta = ArtifactMeta {
        code_version: CODE_VERSION,
        seed: train_cfg.seed,
        vocab_hash: format!("{:016x}", vocab_hash),
        config: &resolved,
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}",
        serde_json::json!({ "_meta": meta, "checkpoint_step": ckpt.store.step_count() })
    );

    for doc in &docs {
        let instances = corpus::make_instances(
            doc,
            &vocab,
            train_cfg.max_phrases,
            train_cfg.max_source_len,
            false,
        )?;
        let inst = &instances[0];
        let gen = generate_keyphrases(inst, &vocab, &ckpt.store, &model_cfg, &gen_cfg)?;
        let line = PredLine {
            id: doc.id.clone(),
            phrases: gen.phrases.iter().map(|p| p.surface()).collect(),
            scores: gen.phrases.iter().map(|p| p.log_prob).collect(),
            unfinished: gen.phrases.iter().map(|p| p.unfinished).collect(),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&line).unwrap());
    }
    fs::write(&args.out, out)
        .map_err(|e| CliError::Data(format!("cannot write {}: {}", args.out.display(), e)))?;
    eprintln!("predicted {} documents -> {}", docs.len(), args.out.display());
    Ok(())
}

/// Deserialization twin of [`ResolvedConfig`] for reading checkpoint echoes.
#[derive(Debug, Deserialize)]
struct ResolvedConfigEcho {
    train: TrainConfig,
}

fn read_predictions(path: &Path) -> Result<Vec<PredLine>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {}", path.display(), e)))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("line {}: malformed JSON: {}", i + 1, e)))?;
        if value.get("_meta").is_some() {
            continue;
        }
        let parsed: PredLine = serde_json::from_value(value)
            .map_err(|e| CliError::Data(format!("line {}: bad prediction record: {}", i + 1, e)))?;
        out.push(parsed);
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let (ks, alpha) = resolve_eval(&file, Some(args))?;
    let gold_docs = corpus::read_jsonl(&args.gold)?;
    let preds = read_predictions(&args.pred)?;

    let gold_by_id: BTreeMap<&str, &Document> =
        gold_docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let unknown: Vec<&str> = preds
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| !gold_by_id.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Data(format!(
            "prediction ids missing from gold: {}",
            unknown.join(", ")
        )));
    }

    let mut pairs = Vec::new();
    for p in &preds {
        let doc = gold_by_id[p.id.as_str()];
        let mut source = corpus::preprocess_text(&doc.title);
        source.extend(corpus::preprocess_text(&doc.abstract_text));
        pairs.push(metrics::EvalPair {
            id: p.id.clone(),
            predicted: p.phrases.iter().map(|s| corpus::preprocess_text(s)).collect(),
            gold: doc
                .keyphrases
                .iter()
                .map(|s| corpus::preprocess_text(s))
                .collect(),
            source_tokens: source,
        });
    }
    let (report, docs) = metrics::evaluate_corpus(&pairs, &ks, alpha)?;

    let gold_without_preds = gold_docs.len() - pairs.len();
    let output = serde_json::json!({
        "meta": {
            "code_version": CODE_VERSION,
            "ks": ks,
            "alpha": alpha,
            "conventions": {
                "precision_denominator": "min(k, predictions kept after stemmed dedup)",
                "averaging": "macro over documents; documents without gold on a side are skipped for that side",
                "ideal_dcg": "greedy over predictions plus gold",
                "stemming": "original Porter algorithm",
            },
            "gold_docs_without_predictions": gold_without_preds,
        },
        "report": report,
    });
    let pretty = serde_json::to_string_pretty(&output).unwrap();
    match &args.out {
        Some(path) => fs::write(path, &pretty)
            .map_err(|e| CliError::Data(format!("cannot write {}: {}", path.display(), e)))?,
        None => println!("{}", pretty),
    }

    if let Some(csv_path) = &args.per_doc {
        let mut csv = String::from("id");
        for &k in &ks {
            let _ = write!(
                csv,
                ",f1@{k},p@{k},r_present@{k},ndcg@{k},r_absent@{k},ndcg_absent@{k}"
            );
        }
        csv.push('\n');
        let fmt = |v: Option<&f64>| v.map(|x| format!("{:.6}", x)).unwrap_or_default();
        for d in &docs {
            let _ = write!(csv, "{}", csv_field(&d.id));
            for &k in &ks {
                let _ = write!(
                    csv,
                    ",{},{},{},{},{},{}",
                    fmt(d.present_f1.get(&k)),
                    fmt(d.present_precision.get(&k)),
                    fmt(d.present_recall.get(&k)),
                    fmt(d.present_ndcg.get(&k)),
                    fmt(d.absent_recall.get(&k)),
                    fmt(d.absent_ndcg.get(&k)),
                );
            }
            csv.push('\n');
        }
        fs::write(csv_path, csv)
            .map_err(|e| CliError::Data(format!("cannot write {}: {}", csv_path.display(), e)))?;
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let report = training::reference_gradcheck(args.seed, args.eps)?;
    println!(
        "gradcheck: max relative error {:.3e} at {} ({} parameters, {} elements, {:.1}s)",
        report.max_rel,
        report.worst_param,
        report.params_checked,
        report.elements_checked,
        started.elapsed().as_secs_f64()
    );
    if report.max_rel < GRADCHECK_TOLERANCE {
        println!("gradcheck: PASS (tolerance {:.0e})", GRADCHECK_TOLERANCE);
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: {:.3e} >= {:.0e}",
            report.max_rel, GRADCHECK_TOLERANCE
        )))
    }
}

/// Parse argv and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // clap uses 0 for --help/--version and 2 for usage errors
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match &cli.cmd {
        Cmd::Vocab(a) => cmd_vocab(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Predict(a) => cmd_predict(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_overrides_file_overrides_default() {
        let file: FileConfig = toml::from_str(
            r#"
            [train]
            lr = 0.01
            hidden_dim = 64
            "#,
        )
        .unwrap();
        let t = resolve_train(&file, None).unwrap();
        assert_eq!(t.lr, 0.01);
        assert_eq!(t.hidden_dim, 64);
        assert_eq!(t.embed_dim, 150); // default survives
        assert_eq!(t.clip, 0.1);
        assert_eq!(t.vocab_cap, 50_000);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let r: Result<FileConfig, _> = toml::from_str("[train]\nlearning_rate = 0.1\n");
        assert!(r.is_err());
    }

    #[test]
    fn eval_defaults_match_reference_setup() {
        let (ks, alpha) = resolve_eval(&FileConfig::default(), None).unwrap();
        assert_eq!(ks, vec![5, 10]);
        assert_eq!(alpha, 0.5);
    }

    #[test]
    fn generate_defaults_match_reference_setup() {
        let g = resolve_generate(&FileConfig::default(), MechanismMode::Full, None).unwrap();
        assert_eq!(g.beam_size, 200);
        assert_eq!(g.beam_depth, 6);
        assert_eq!(g.num_phrases, 10);
        assert!(!g.dedup_filter);
    }

    #[test]
    fn bad_mode_is_usage_error() {
        let file: FileConfig = toml::from_str("[train]\nmode = \"everything\"\n").unwrap();
        let err = resolve_train(&file, None).unwrap_err();
        assert_eq!(err.code(), 2);
    }
}
