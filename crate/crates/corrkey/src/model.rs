//! Model shape configuration, mechanism ablation flags, and the canonical
//! parameter registry shared by initialization, checkpoints and forward
//! passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    Binding, GruCtxWeights, GruWeights, NnError, NodeId, ParamSpec, ParamStore, Tape, Tensor,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty source sequence")]
    EmptySource,
    #[error("invalid token id {id} (extended vocabulary size {size})")]
    InvalidToken { id: usize, size: usize },
    #[error("coverage length {cov} does not match source length {src}")]
    CoverageMismatch { cov: usize, src: usize },
    #[error("non-finite loss on instance {0}")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which correlation mechanisms are active. Inactive paths are inert:
/// a disabled coverage vector is still accumulated but never read, and a
/// disabled review context is the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MechanismMode {
    #[default]
    Full,
    CoverageOnly,
    ReviewOnly,
    CopyOnly,
}

impl MechanismMode {
    pub fn use_coverage(self) -> bool {
        matches!(self, MechanismMode::Full | MechanismMode::CoverageOnly)
    }

    pub fn use_review(self) -> bool {
        matches!(self, MechanismMode::Full | MechanismMode::ReviewOnly)
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(MechanismMode::Full),
            "coverage_only" => Some(MechanismMode::CoverageOnly),
            "review_only" => Some(MechanismMode::ReviewOnly),
            "copy_only" => Some(MechanismMode::CopyOnly),
            _ => None,
        }
    }
}

impl std::fmt::Display for MechanismMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MechanismMode::Full => "full",
            MechanismMode::CoverageOnly => "coverage_only",
            MechanismMode::ReviewOnly => "review_only",
            MechanismMode::CopyOnly => "copy_only",
        };
        f.write_str(s)
    }
}

/// Tensor shapes of the model. All parameters exist in every mode so that
/// checkpoints are mode-portable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Attention scoring dimension (length of the `v` vectors).
    pub attn_dim: usize,
    pub mode: MechanismMode,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim,
            hidden_dim,
            attn_dim: hidden_dim,
            mode: MechanismMode::Full,
        }
    }

    pub fn with_mode(mut self, mode: MechanismMode) -> Self {
        self.mode = mode;
        self
    }

    /// Length of the output feature vector [embed(y); s_t; c_E; c_D].
    pub fn feat_dim(&self) -> usize {
        self.embed_dim + self.hidden_dim + 2 * self.hidden_dim + self.hidden_dim
    }

    /// Canonical parameter list: names, shapes and order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let (v, e, h, a) = (self.vocab_size, self.embed_dim, self.hidden_dim, self.attn_dim);
        let f = self.feat_dim();
        let mut specs = vec![ParamSpec::new("embed", vec![v, e])];

        for dir in ["enc_fwd", "enc_bwd"] {
            for gate in ["r", "z", "c"] {
                specs.push(ParamSpec::new(format!("{dir}.w_{gate}"), vec![h, e]));
                specs.push(ParamSpec::new(format!("{dir}.u_{gate}"), vec![h, h]));
                specs.push(ParamSpec::new(format!("{dir}.b_{gate}"), vec![h]));
            }
        }

        specs.push(ParamSpec::new("init.w", vec![h, 2 * h]));
        specs.push(ParamSpec::new("init.b", vec![h]));

        specs.push(ParamSpec::new("attn_src.w_h", vec![a, 2 * h]));
        specs.push(ParamSpec::new("attn_src.w_s", vec![a, h]));
        specs.push(ParamSpec::new("attn_src.v", vec![a]));
        specs.push(ParamSpec::new("attn_src.w_c", vec![a]));
        specs.push(ParamSpec::new("attn_src.b", vec![a]));

        specs.push(ParamSpec::new("attn_rev.w_h", vec![a, h]));
        specs.push(ParamSpec::new("attn_rev.w_s", vec![a, h]));
        specs.push(ParamSpec::new("attn_rev.v", vec![a]));

        for gate in ["r", "z", "c"] {
            specs.push(ParamSpec::new(format!("dec.w_{gate}"), vec![h, e]));
            specs.push(ParamSpec::new(format!("dec.u_{gate}"), vec![h, h]));
            specs.push(ParamSpec::new(format!("dec.ce_{gate}"), vec![h, 2 * h]));
            specs.push(ParamSpec::new(format!("dec.cd_{gate}"), vec![h, h]));
            specs.push(ParamSpec::new(format!("dec.b_{gate}"), vec![h]));
        }

        specs.push(ParamSpec::new("copy.w_c", vec![2 * h, f]));
        specs.push(ParamSpec::new("out.w", vec![v, f]));
        specs.push(ParamSpec::new("out.b", vec![v]));
        specs
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        ParamStore::init(&self.param_specs(), seed).expect("param registry has unique names")
    }
}

/// Inverted-dropout mask source. `Off` is a no-op; `On` draws one Bernoulli
/// mask per application from a seeded stream, so training passes are
/// reproducible.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Dropout<'static> {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn on(rate: f64, rng: &'r mut ChaCha8Rng) -> Dropout<'r> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        Dropout { rate, rng: Some(rng) }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        let rng = match (&mut self.rng, self.rate > 0.0) {
            (Some(rng), true) => rng,
            _ => return x,
        };
        let keep = 1.0 - self.rate;
        let n = tape.value(x).numel();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = tape.constant(Tensor::vector(mask));
        tape.mul(x, m)
    }
}

/// Attention parameters bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttnNodes {
    pub w_h: NodeId,
    pub w_s: NodeId,
    pub v: NodeId,
    /// Coverage feedback vector; only present for source attention.
    pub w_c: Option<NodeId>,
    pub b: Option<NodeId>,
}

/// Every model parameter bound as a leaf on one tape.
pub struct ModelNodes {
    pub embed: NodeId,
    pub enc_fwd: GruWeights,
    pub enc_bwd: GruWeights,
    pub init_w: NodeId,
    pub init_b: NodeId,
    pub attn_src: AttnNodes,
    pub attn_rev: AttnNodes,
    pub dec: GruWeights,
    pub copy_w: NodeId,
    pub out_w: NodeId,
    pub out_b: NodeId,
    pub binding: Binding,
}

impl ModelNodes {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> ModelNodes {
        let b = store.bind(tape);
        let enc = |dir: &str| -> GruWeights {
            GruWeights {
                w_r: b.node(&format!("{dir}.w_r")),
                u_r: b.node(&format!("{dir}.u_r")),
                b_r: b.node(&format!("{dir}.b_r")),
                w_z: b.node(&format!("{dir}.w_z")),
                u_z: b.node(&format!("{dir}.u_z")),
                b_z: b.node(&format!("{dir}.b_z")),
                w_c: b.node(&format!("{dir}.w_c")),
                u_c: b.node(&format!("{dir}.u_c")),
                b_c: b.node(&format!("{dir}.b_c")),
                ctx: vec![],
            }
        };
        let enc_fwd = enc("enc_fwd");
        let enc_bwd = enc("enc_bwd");
        // decoder cell: context 0 is the source context, context 1 the review context
        let dec = GruWeights {
            w_r: b.node("dec.w_r"),
            u_r: b.node("dec.u_r"),
            b_r: b.node("dec.b_r"),
            w_z: b.node("dec.w_z"),
            u_z: b.node("dec.u_z"),
            b_z: b.node("dec.b_z"),
            w_c: b.node("dec.w_c"),
            u_c: b.node("dec.u_c"),
            b_c: b.node("dec.b_c"),
            ctx: vec![
                GruCtxWeights {
                    r: b.node("dec.ce_r"),
                    z: b.node("dec.ce_z"),
                    c: b.node("dec.ce_c"),
                },
                GruCtxWeights {
                    r: b.node("dec.cd_r"),
                    z: b.node("dec.cd_z"),
                    c: b.node("dec.cd_c"),
                },
            ],
        };
        ModelNodes {
            embed: b.node("embed"),
            enc_fwd,
            enc_bwd,
            init_w: b.node("init.w"),
            init_b: b.node("init.b"),
            attn_src: AttnNodes {
                w_h: b.node("attn_src.w_h"),
                w_s: b.node("attn_src.w_s"),
                v: b.node("attn_src.v"),
                w_c: Some(b.node("attn_src.w_c")),
                b: Some(b.node("attn_src.b")),
            },
            attn_rev: AttnNodes {
                w_h: b.node("attn_rev.w_h"),
                w_s: b.node("attn_rev.w_s"),
                v: b.node("attn_rev.v"),
                w_c: None,
                b: None,
            },
            dec,
            copy_w: b.node("copy.w_c"),
            out_w: b.node("out.w"),
            out_b: b.node("out.b"),
            binding: b,
        }
    }
}
