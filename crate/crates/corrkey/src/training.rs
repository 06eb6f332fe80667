//! One-to-many training: all phrases of an instance are decoded in order on
//! one tape with coverage and review state threaded across them, the loss is
//! the per-phrase mean of summed token negative log-likelihoods, and each
//! instance triggers clip + Adam. Early stopping watches validation loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TrainingInstance, BOS};
use crate::decoder::{
    decoder_step, init_phrase_state, target_log_prob, update_coverage, SourceCtx, StepArgs,
};
use crate::encoder::encode;
use crate::model::{Dropout, MechanismMode, ModelConfig, ModelError, ModelNodes};
use crate::nn::{NodeId, ParamStore, Tape};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Maximum acceptable relative error between analytic and central-difference
/// gradients at eps = 1e-5 in 64-bit.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("instance {0} has no target phrases")]
    NoPhrases(String),
    #[error("non-finite loss on instance {0}")]
    NonFiniteLoss(String),
    #[error("non-finite gradient on instance {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<crate::nn::NnError> for TrainError {
    fn from(e: crate::nn::NnError) -> Self {
        TrainError::Model(ModelError::Nn(e))
    }
}

/// Hyperparameters. Defaults follow the reference setup: lr 1e-4, clip 0.1,
/// dropout 0.5, vocabulary cap 50000, embedding 150, hidden 300, at most 10
/// phrases per instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub clip: f64,
    pub dropout: f64,
    pub vocab_cap: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Attention scoring dimension; defaults to the hidden size.
    pub attn_dim: Option<usize>,
    pub max_phrases: usize,
    pub max_source_len: usize,
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub mode: MechanismMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            clip: 0.1,
            dropout: 0.5,
            vocab_cap: 50_000,
            embed_dim: 150,
            hidden_dim: 300,
            attn_dim: None,
            max_phrases: 10,
            max_source_len: 400,
            seed: 0,
            max_epochs: 50,
            patience: 3,
            mode: MechanismMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(vocab_size, self.embed_dim, self.hidden_dim);
        cfg.attn_dim = self.attn_dim.unwrap_or(self.hidden_dim);
        cfg.mode = self.mode;
        cfg
    }
}

/// Loss of one instance: `total` is the mean over phrases of the summed
/// token negative log-likelihood.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub total: f64,
    pub per_phrase: Vec<f64>,
    pub token_count: usize,
}

impl LossReport {
    pub fn per_token(&self) -> f64 {
        let sum: f64 = self.per_phrase.iter().sum();
        sum / self.token_count.max(1) as f64
    }
}

pub enum LossMode<'r> {
    /// Teacher forcing with dropout masks drawn from the given stream.
    Train(&'r mut ChaCha8Rng),
    /// Teacher forcing, dropout disabled.
    Eval,
}

/// A completed forward pass, ready for backward.
pub struct ForwardPass {
    pub tape: Tape,
    pub loss: NodeId,
    pub report: LossReport,
    pub nodes: ModelNodes,
    /// Coverage vector node after the last decoder step.
    pub final_coverage: NodeId,
    /// Number of states in the review set after the last step.
    pub review_len: usize,
}

/// Decode every phrase of `instance` with teacher forcing, threading
/// coverage and review state across phrases, and accumulate the loss.
pub fn forward_loss(
    instance: &TrainingInstance,
    store: &ParamStore,
    cfg: &ModelConfig,
    mode: LossMode,
    dropout_rate: f64,
) -> Result<ForwardPass, TrainError> {
    if instance.phrases.is_empty() {
        return Err(TrainError::NoPhrases(instance.id.clone()));
    }
    let mut tape = Tape::new();
    let nodes = ModelNodes::bind(&mut tape, store);
    let mut dropout_holder;
    let dropout = match mode {
        LossMode::Train(rng) => {
            dropout_holder = Dropout::on(dropout_rate, rng);
            &mut dropout_holder
        }
        LossMode::Eval => {
            dropout_holder = Dropout::off();
            &mut dropout_holder
        }
    };

    let enc = encode(&mut tape, &nodes, cfg, &instance.source_ids, dropout)?;
    let t_len = instance.source_ids.len();
    let n_oov = instance.oov_words.len();
    let ctx = SourceCtx::build(&mut tape, &nodes, &enc.h);

    let mut coverage = tape.constant(crate::nn::Tensor::zeros(vec![t_len]));
    let mut review: Vec<NodeId> = Vec::new();

    let s_init = init_phrase_state(&mut tape, &enc, &nodes);

    let mut per_phrase_nodes: Vec<NodeId> = Vec::new();
    let mut per_phrase: Vec<f64> = Vec::new();
    let mut token_count = 0usize;

    for phrase in &instance.phrases {
        let mut s_prev = s_init;
        let mut token_nlls: Vec<NodeId> = Vec::new();
        let mut y_prev = BOS;
        for &target in phrase {
            let args = StepArgs {
                y_prev,
                s_prev,
                ctx: &ctx,
                coverage,
                review: &review,
                source_ext_ids: &instance.source_ext_ids,
                n_oov,
            };
            let out = decoder_step(&mut tape, &nodes, cfg, &args, dropout)?;
            let logp = target_log_prob(
                &mut tape,
                out.gen_scores,
                out.copy_scores,
                target,
                &instance.source_ext_ids,
                cfg.vocab_size,
                n_oov,
            )?;
            let nll = tape.scale(logp, -1.0);
            token_nlls.push(nll);

            review.push(s_prev);
            coverage = update_coverage(&mut tape, coverage, out.attn);
            s_prev = out.s_t;
            y_prev = target;
            token_count += 1;
        }
        let phrase_loss = tape.add_n(&token_nlls);
        per_phrase.push(tape.value(phrase_loss).item());
        per_phrase_nodes.push(phrase_loss);
    }

    let summed = tape.add_n(&per_phrase_nodes);
    let loss = tape.scale(summed, 1.0 / instance.phrases.len() as f64);
    let total = tape.value(loss).item();
    if !total.is_finite() {
        return Err(TrainError::NonFiniteLoss(instance.id.clone()));
    }
    Ok(ForwardPass {
        tape,
        loss,
        report: LossReport {
            total,
            per_phrase,
            token_count,
        },
        nodes,
        final_coverage: coverage,
        review_len: review.len(),
    })
}

/// Loss of one instance without recording gradients for an update.
pub fn compute_loss(
    instance: &TrainingInstance,
    store: &ParamStore,
    cfg: &ModelConfig,
    mode: LossMode,
    dropout_rate: f64,
) -> Result<LossReport, TrainError> {
    Ok(forward_loss(instance, store, cfg, mode, dropout_rate)?.report)
}

/// Early-stopping state machine: stop after `patience` consecutive
/// evaluations without strict improvement over the best seen.
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_index: usize,
    since_best: usize,
    evals: usize,
}

#[derive(Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: f64::INFINITY,
            best_index: 0,
            since_best: 0,
            evals: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.evals += 1;
        if loss < self.best {
            self.best = loss;
            self.best_index = self.evals;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    /// 1-based index of the evaluation that produced the best loss.
    pub fn best_index(&self) -> usize {
        self.best_index
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepStats<'a> {
    pub step: u64,
    pub instance_id: &'a str,
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Global gradient norm after clipping.
    pub clipped_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub dev_loss: f64,
}

/// Receives progress events; the CLI turns these into the structured log.
pub trait TrainObserver {
    fn on_step(&mut self, _stats: &StepStats) {}
    fn on_epoch(&mut self, _stats: &EpochStats) {}
}

pub struct NullObserver;
impl TrainObserver for NullObserver {}

pub struct TrainOutcome {
    /// Parameters at the best dev evaluation.
    pub best: ParamStore,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    /// Parameters after the last completed epoch.
    pub last: ParamStore,
    pub epochs_run: usize,
    pub history: Vec<EpochStats>,
}

fn derive_seed(seed: u64, tag: &str, k: u64) -> u64 {
    // FNV-1a over (seed, tag, k)
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in seed.to_le_bytes() {
        eat(b);
    }
    for b in tag.bytes() {
        eat(b);
    }
    for b in k.to_le_bytes() {
        eat(b);
    }
    h
}

/// Mean eval-mode loss over a dataset.
pub fn mean_loss(
    data: &[TrainingInstance],
    store: &ParamStore,
    cfg: &ModelConfig,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for inst in data {
        sum += compute_loss(inst, store, cfg, LossMode::Eval, 0.0)?.total;
    }
    Ok(sum / data.len().max(1) as f64)
}

/// Train from freshly initialized parameters.
pub fn train(
    dataset: &[TrainingInstance],
    dev: &[TrainingInstance],
    config: &TrainConfig,
    vocab_size: usize,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    let cfg = config.model_config(vocab_size);
    let store = cfg.init_params(config.seed);
    train_from(store, 0, dataset, dev, config, &cfg, observer)
}

/// Resume (or start) training from an existing parameter store whose step
/// counter reflects `completed_epochs * dataset.len()` updates. Per-epoch
/// RNG streams are derived from (seed, epoch), so a resumed run replays the
/// exact shuffle and dropout sequence of an uninterrupted one.
pub fn train_from(
    mut store: ParamStore,
    completed_epochs: usize,
    dataset: &[TrainingInstance],
    dev: &[TrainingInstance],
    config: &TrainConfig,
    cfg: &ModelConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut stopper = EarlyStopper::new(config.patience.max(1));
    let mut best = store.snapshot();
    let mut best_epoch = completed_epochs;
    let mut best_dev = f64::INFINITY;
    let mut history = Vec::new();
    let mut step = store.step_count();

    let mut epochs_run = completed_epochs;
    for epoch in (completed_epochs + 1)..=config.max_epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle", epoch as u64));
        order.shuffle(&mut shuffle_rng);
        let mut dropout_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "dropout", epoch as u64));

        let mut epoch_loss = 0.0;
        for idx in order {
            let inst = &dataset[idx];
            let started = Instant::now();
            let pass = forward_loss(
                inst,
                &store,
                cfg,
                LossMode::Train(&mut dropout_rng),
                config.dropout,
            )?;
            let grads = pass.tape.backward(pass.loss)?;
            store.accumulate_grads(&grads, &pass.nodes.binding);
            if !store.grads_finite() {
                return Err(TrainError::NonFiniteGradient(inst.id.clone()));
            }
            let pre_norm = store.clip_gradients(config.clip);
            let clipped_norm = pre_norm.min(config.clip);
            store.adam_step(config.lr, ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
            step += 1;
            epoch_loss += pass.report.total;
            observer.on_step(&StepStats {
                step,
                instance_id: &inst.id,
                loss: pass.report.total,
                grad_norm: pre_norm,
                clipped_norm,
                wall_ms: started.elapsed().as_secs_f64() * 1e3,
            });
        }
        epochs_run = epoch;

        let dev_loss = mean_loss(dev, &store, cfg)?;
        history.push(EpochStats {
            epoch,
            mean_train_loss: epoch_loss / dataset.len() as f64,
            dev_loss,
        });
        observer.on_epoch(history.last().unwrap());

        match stopper.observe(dev_loss) {
            StopDecision::Improved => {
                best = store.snapshot();
                best_epoch = epoch;
                best_dev = dev_loss;
            }
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_dev_loss: best_dev,
        last: store,
        epochs_run,
        history,
    })
}

/// Maximum relative error between analytic gradients of the summed
/// instance loss and central finite differences over every parameter.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel: f64,
    pub worst_param: String,
    pub params_checked: usize,
    pub elements_checked: usize,
}

pub fn gradient_check(
    instances: &[TrainingInstance],
    store: &ParamStore,
    cfg: &ModelConfig,
    eps: f64,
) -> Result<GradCheckReport, TrainError> {
    let mut work = store.snapshot();
    work.zero_grads();
    for inst in instances {
        let pass = forward_loss(inst, &work, cfg, LossMode::Eval, 0.0)?;
        let grads = pass.tape.backward(pass.loss)?;
        work.accumulate_grads(&grads, &pass.nodes.binding);
    }

    let loss_of = |st: &ParamStore| -> Result<f64, TrainError> {
        let mut sum = 0.0;
        for inst in instances {
            sum += compute_loss(inst, st, cfg, LossMode::Eval, 0.0)?.total;
        }
        Ok(sum)
    };

    let names: Vec<String> = work.names().map(String::from).collect();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut elements = 0usize;
    let mut probe = work.snapshot();
    for name in &names {
        let base = work.get(name)?.data().to_vec();
        let analytic = work.grad(name)?.to_vec();
        for i in 0..base.len() {
            let mut v = base.clone();
            v[i] = base[i] + eps;
            probe.set(name, &v)?;
            let up = loss_of(&probe)?;
            v[i] = base[i] - eps;
            probe.set(name, &v)?;
            let down = loss_of(&probe)?;
            v[i] = base[i];
            probe.set(name, &v)?;
            let numeric = (up - down) / (2.0 * eps);
            let rel =
                (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-4);
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{}[{}]", name, i);
            }
            elements += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel,
        worst_param: worst,
        params_checked: names.len(),
        elements_checked: elements,
    })
}

/// Canonical toy setup for the finite-difference suite: vocabulary 20,
/// embedding 8, hidden 12, a 7-token source with one copyable OOV word and
/// two phrases, all mechanisms on.
pub fn reference_gradcheck_setup(seed: u64) -> (Vec<TrainingInstance>, ModelConfig, ParamStore) {
    let vocab_size = 20;
    let mut cfg = ModelConfig::new(vocab_size, 8, 12);
    cfg.attn_dim = 12;
    let store = cfg.init_params(seed);
    let source_ids = vec![6, 7, 8, crate::corpus::UNK, 9, 7, 10];
    let source_ext_ids = vec![6, 7, 8, vocab_size, 9, 7, 10];
    let instance = TrainingInstance {
        id: "gradcheck-toy".into(),
        source_tokens: (0..7).map(|i| format!("tok{i}")).collect(),
        source_ids,
        source_ext_ids,
        // one in-vocabulary phrase and one that must be copied
        phrases: vec![
            vec![7, 9, crate::corpus::EOS],
            vec![vocab_size, crate::corpus::EOS],
        ],
        oov_words: vec!["novelword".into()],
    };
    (vec![instance], cfg, store)
}

/// Run the finite-difference suite on the canonical toy setup.
pub fn reference_gradcheck(seed: u64, eps: f64) -> Result<GradCheckReport, TrainError> {
    let (instances, cfg, store) = reference_gradcheck_setup(seed);
    gradient_check(&instances, &store, &cfg, eps)
}
