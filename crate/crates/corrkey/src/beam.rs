//! Multi-phrase generation: each phrase is found by length-bounded beam
//! search over the extended vocabulary, and the winning hypothesis' attention
//! rows and decoder states are committed to the document state before the
//! next phrase starts. An optional post-filter drops phrases that are
//! substrings of earlier ones.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::corpus::{TrainingInstance, Vocab, BOS, EOS, PAD};
use crate::decoder::{decoder_step, init_phrase_state, DecodeState, SourceCtx, StepArgs};
use crate::encoder::encode;
use crate::model::{Dropout, MechanismMode, ModelConfig, ModelError, ModelNodes};
use crate::nn::{ParamStore, Tape, Tensor};

/// Beam and emission settings. Defaults are the reference configuration:
/// beam size 200, depth 6, 10 phrases.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub beam_size: usize,
    /// Maximum decoder steps per phrase, counting the EOS step.
    pub beam_depth: usize,
    /// Number of phrases to emit per document.
    pub num_phrases: usize,
    /// Drop phrases that duplicate (substring-wise) an earlier phrase.
    pub dedup_filter: bool,
    /// Emit all phrases from a single beam pass without state commits
    /// between phrases. Experimental alternative to sequential emission.
    pub joint_beam: bool,
    pub mode: MechanismMode,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            beam_size: 200,
            beam_depth: 6,
            num_phrases: 10,
            dedup_filter: false,
            joint_beam: false,
            mode: MechanismMode::Full,
        }
    }
}

/// A decoding model the beam can drive: given a hypothesis state and the
/// previous token, produce the next-token distribution and successor state.
pub trait PhraseStepper {
    type State: Clone;
    fn initial_state(&self) -> Self::State;
    fn step(&self, state: &Self::State, y_prev: usize)
        -> Result<(Vec<f64>, Self::State), ModelError>;
    fn ext_vocab_size(&self) -> usize;
    fn bos_id(&self) -> usize {
        BOS
    }
    fn eos_id(&self) -> usize {
        EOS
    }
    /// Tokens the beam must never emit (padding and BOS for the real model).
    fn banned(&self, id: usize) -> bool {
        id == PAD || id == BOS
    }
}

/// One beam hypothesis: body tokens (EOS excluded), accumulated
/// log-probability, and hypothesis-local pending state.
#[derive(Debug, Clone)]
pub struct BeamHypothesis<S> {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub state: S,
    pub finished: bool,
}

fn rank_cmp<S>(a: &BeamHypothesis<S>, b: &BeamHypothesis<S>) -> std::cmp::Ordering {
    b.log_prob
        .partial_cmp(&a.log_prob)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then(a.tokens.cmp(&b.tokens))
}

/// Ranked result of one phrase-level beam search.
pub struct RankedPhrases<S> {
    /// Finished hypotheses, best first.
    pub finished: Vec<BeamHypothesis<S>>,
    /// Best live hypothesis when the depth bound cut it off.
    pub best_unfinished: Option<BeamHypothesis<S>>,
}

/// Length-bounded beam search for one phrase. Hypotheses carry their own
/// pending coverage and review effects; nothing mutates document state here.
pub fn generate_phrase<M: PhraseStepper>(
    model: &M,
    beam_size: usize,
    beam_depth: usize,
) -> Result<RankedPhrases<M::State>, ModelError> {
    assert!(beam_size >= 1 && beam_depth >= 1);
    let mut live = vec![BeamHypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        state: model.initial_state(),
        finished: false,
    }];
    let mut finished: Vec<BeamHypothesis<M::State>> = Vec::new();

    for _ in 0..beam_depth {
        if live.is_empty() {
            break;
        }
        let mut candidates: Vec<BeamHypothesis<M::State>> = Vec::new();
        for hyp in &live {
            let y_prev = hyp.tokens.last().copied().unwrap_or(model.bos_id());
            let (probs, next_state) = model.step(&hyp.state, y_prev)?;
            debug_assert_eq!(probs.len(), model.ext_vocab_size());
            for (tok, &p) in probs.iter().enumerate() {
                if model.banned(tok) || p <= 0.0 {
                    continue;
                }
                let log_prob = hyp.log_prob + p.ln();
                if tok == model.eos_id() {
                    finished.push(BeamHypothesis {
                        tokens: hyp.tokens.clone(),
                        log_prob,
                        state: next_state.clone(),
                        finished: true,
                    });
                } else {
                    let mut tokens = hyp.tokens.clone();
                    tokens.push(tok);
                    candidates.push(BeamHypothesis {
                        tokens,
                        log_prob,
                        state: next_state.clone(),
                        finished: false,
                    });
                }
            }
        }
        candidates.sort_by(rank_cmp);
        candidates.truncate(beam_size);
        live = candidates;
    }

    finished.sort_by(rank_cmp);
    live.sort_by(rank_cmp);
    Ok(RankedPhrases {
        finished,
        best_unfinished: live.into_iter().next(),
    })
}

/// Model-backed stepper for one document. Each step records a short-lived
/// tape seeded with the shared encoder states and the document-plus-pending
/// coverage and review values.
pub struct DocDecoder<'a> {
    store: &'a ParamStore,
    cfg: ModelConfig,
    source_ext_ids: &'a [usize],
    n_oov: usize,
    h_values: Vec<Rc<Tensor>>,
    wh_values: Vec<Rc<Tensor>>,
    copy_gate_values: Vec<Rc<Tensor>>,
    s_init: Rc<Tensor>,
    doc_coverage: Vec<f64>,
    doc_review: Vec<Rc<Tensor>>,
}

/// Hypothesis-local decoder state: current hidden state plus pending
/// coverage increments and pending review states not yet committed to the
/// document.
#[derive(Debug, Clone)]
pub struct DocHypState {
    s: Rc<Tensor>,
    pending_coverage: Vec<f64>,
    pending_states: Vec<Rc<Tensor>>,
}

impl<'a> DocDecoder<'a> {
    pub fn new(
        store: &'a ParamStore,
        cfg: &ModelConfig,
        instance: &'a TrainingInstance,
        state: &DecodeState,
    ) -> Result<DocDecoder<'a>, ModelError> {
        let mut tape = Tape::new();
        let nodes = ModelNodes::bind(&mut tape, store);
        let enc = encode(&mut tape, &nodes, cfg, &instance.source_ids, &mut Dropout::off())?;
        let s_init_node = init_phrase_state(&mut tape, &enc, &nodes);
        let ctx = SourceCtx::build(&mut tape, &nodes, &enc.h);
        let (h, wh, gate) = ctx.parts();
        let values = |ids: &[crate::nn::NodeId]| -> Vec<Rc<Tensor>> {
            ids.iter().map(|&n| tape.value_rc(n)).collect()
        };
        Ok(DocDecoder {
            store,
            cfg: cfg.clone(),
            source_ext_ids: &instance.source_ext_ids,
            n_oov: instance.oov_words.len(),
            h_values: values(h),
            wh_values: values(wh),
            copy_gate_values: values(gate),
            s_init: tape.value_rc(s_init_node),
            doc_coverage: state.coverage.clone(),
            doc_review: state.review.clone(),
        })
    }
}

impl PhraseStepper for DocDecoder<'_> {
    type State = DocHypState;

    fn initial_state(&self) -> DocHypState {
        DocHypState {
            s: Rc::clone(&self.s_init),
            pending_coverage: vec![0.0; self.doc_coverage.len()],
            pending_states: Vec::new(),
        }
    }

    fn ext_vocab_size(&self) -> usize {
        self.cfg.vocab_size + self.n_oov
    }

    fn step(
        &self,
        state: &DocHypState,
        y_prev: usize,
    ) -> Result<(Vec<f64>, DocHypState), ModelError> {
        let mut tape = Tape::new();
        let nodes = ModelNodes::bind(&mut tape, self.store);
        let leaves = |tape: &mut Tape, vals: &[Rc<Tensor>]| -> Vec<crate::nn::NodeId> {
            vals.iter().map(|t| tape.leaf(Rc::clone(t))).collect()
        };
        let h = leaves(&mut tape, &self.h_values);
        let wh = leaves(&mut tape, &self.wh_values);
        let gate = leaves(&mut tape, &self.copy_gate_values);
        let ctx = SourceCtx::from_parts(h, wh, gate);
        let coverage_values: Vec<f64> = self
            .doc_coverage
            .iter()
            .zip(&state.pending_coverage)
            .map(|(a, b)| a + b)
            .collect();
        let coverage = tape.constant(Tensor::vector(coverage_values));
        let review: Vec<_> = self
            .doc_review
            .iter()
            .chain(&state.pending_states)
            .map(|t| tape.leaf(Rc::clone(t)))
            .collect();
        let s_prev = tape.leaf(Rc::clone(&state.s));

        let args = StepArgs {
            y_prev,
            s_prev,
            ctx: &ctx,
            coverage,
            review: &review,
            source_ext_ids: self.source_ext_ids,
            n_oov: self.n_oov,
        };
        let out = decoder_step(&mut tape, &nodes, &self.cfg, &args, &mut Dropout::off())?;

        let mut pending_coverage = state.pending_coverage.clone();
        for (c, a) in pending_coverage.iter_mut().zip(tape.value(out.attn).data()) {
            *c += a;
        }
        let mut pending_states = state.pending_states.clone();
        pending_states.push(Rc::clone(&state.s));
        Ok((
            out.dist.probs,
            DocHypState {
                s: tape.value_rc(out.s_t),
                pending_coverage,
                pending_states,
            },
        ))
    }
}

/// One emitted keyphrase with its surface form and beam score.
#[derive(Debug, Clone, Serialize)]
pub struct GeneratedPhrase {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    pub log_prob: f64,
    pub unfinished: bool,
}

impl GeneratedPhrase {
    pub fn surface(&self) -> String {
        self.tokens.join(" ")
    }
}

pub struct GenerationOutput {
    /// Phrases in emission order.
    pub phrases: Vec<GeneratedPhrase>,
    /// Final document state, for coverage/review accounting.
    pub state: DecodeState,
}

fn render_phrase(
    tokens: &[usize],
    vocab: &Vocab,
    instance: &TrainingInstance,
    log_prob: f64,
    unfinished: bool,
) -> GeneratedPhrase {
    let surface = tokens
        .iter()
        .map(|&id| instance.render(id, vocab))
        .collect();
    GeneratedPhrase {
        tokens: surface,
        token_ids: tokens.to_vec(),
        log_prob,
        unfinished,
    }
}

/// Sequentially emit up to `num_phrases` keyphrases for one instance. After
/// each round the top finished hypothesis with a novel surface form is
/// committed: its attention rows extend the coverage vector and its decoder
/// states extend the review set.
pub fn generate_keyphrases(
    instance: &TrainingInstance,
    vocab: &Vocab,
    store: &ParamStore,
    model_cfg: &ModelConfig,
    gen: &GenerationConfig,
) -> Result<GenerationOutput, ModelError> {
    let cfg = model_cfg.clone().with_mode(gen.mode);
    if gen.joint_beam {
        return generate_joint(instance, vocab, store, &cfg, gen);
    }
    let mut state = DecodeState::new(instance.source_ids.len());
    let mut emitted: Vec<GeneratedPhrase> = Vec::new();

    for _ in 0..gen.num_phrases {
        let decoder = DocDecoder::new(store, &cfg, instance, &state)?;
        let ranked = generate_phrase(&decoder, gen.beam_size, gen.beam_depth)?;

        let novel = |tokens: &[usize]| -> bool {
            let surface = tokens
                .iter()
                .map(|&id| instance.render(id, vocab))
                .collect::<Vec<_>>()
                .join(" ");
            emitted.iter().all(|p| p.surface() != surface)
        };

        let winner = ranked
            .finished
            .into_iter()
            .find(|h| novel(&h.tokens))
            .or_else(|| ranked.best_unfinished.filter(|h| novel(&h.tokens)));
        let Some(winner) = winner else { break };

        state.commit(&winner.state.pending_coverage, winner.state.pending_states);
        emitted.push(render_phrase(
            &winner.tokens,
            vocab,
            instance,
            winner.log_prob,
            !winner.finished,
        ));
    }

    let phrases = if gen.dedup_filter {
        dedup_filter(emitted)
    } else {
        emitted
    };
    Ok(GenerationOutput { phrases, state })
}

/// Single-pass emission: one beam run, top distinct finished hypotheses,
/// no state commits between phrases.
fn generate_joint(
    instance: &TrainingInstance,
    vocab: &Vocab,
    store: &ParamStore,
    cfg: &ModelConfig,
    gen: &GenerationConfig,
) -> Result<GenerationOutput, ModelError> {
    let state = DecodeState::new(instance.source_ids.len());
    let decoder = DocDecoder::new(store, cfg, instance, &state)?;
    let ranked = generate_phrase(&decoder, gen.beam_size, gen.beam_depth)?;
    let mut emitted: Vec<GeneratedPhrase> = Vec::new();
    let mut final_state = state;
    for hyp in ranked
        .finished
        .iter()
        .chain(ranked.best_unfinished.iter())
    {
        if emitted.len() >= gen.num_phrases {
            break;
        }
        let phrase = render_phrase(&hyp.tokens, vocab, instance, hyp.log_prob, !hyp.finished);
        if emitted.iter().any(|p| p.surface() == phrase.surface()) {
            continue;
        }
        emitted.push(phrase);
    }
    // joint mode commits only the best hypothesis' effects
    if let Some(best) = ranked
        .finished
        .into_iter()
        .next()
        .or(ranked.best_unfinished)
    {
        final_state.commit(&best.state.pending_coverage, best.state.pending_states);
    }
    let phrases = if gen.dedup_filter {
        dedup_filter(emitted)
    } else {
        emitted
    };
    Ok(GenerationOutput {
        phrases,
        state: final_state,
    })
}

fn contains_contiguous(hay: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > hay.len() {
        return false;
    }
    hay.windows(needle.len()).any(|w| w == needle)
}

/// Keep the first appearance among duplicate predictions, where duplication
/// means one phrase's token sequence is a contiguous subsequence of the
/// other's.
pub fn dedup_filter(phrases: Vec<GeneratedPhrase>) -> Vec<GeneratedPhrase> {
    let mut kept: Vec<GeneratedPhrase> = Vec::new();
    for p in phrases {
        let dup = kept.iter().any(|k| {
            k.tokens == p.tokens
                || contains_contiguous(&k.tokens, &p.tokens)
                || contains_contiguous(&p.tokens, &k.tokens)
        });
        if !dup {
            kept.push(p);
        }
    }
    kept
}
