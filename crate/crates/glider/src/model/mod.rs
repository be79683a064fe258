//! Shared autoregressive sequence model with scalar value heads.
//!
//! One trunk (a gated recurrent aggregator by default, causal attention as an
//! alternative) serves four read-outs: the token policy head, a Q head, a V
//! head, and hierarchy tag embeddings that condition the same parameters to
//! act as either the high- or the low-level policy.

pub mod checkpoint;
mod grad;
pub mod gradcheck;
mod math;
mod ops;
mod optim;
mod trunk;

pub use grad::{
    actor_loss_grad, q_loss_grad, sft_loss_grad, v_loss_grad, ActorLossStats, CriticItem,
    LossSpec, SftLossParts,
};
pub use math::Mat;
pub use ops::{log_prob, q_value, sample, sample_seeded, v_value, DecodeMode};
pub use optim::{adamw_step, polyak_update, AdamW, OptState};

use rand::Rng;

use crate::data::{Token, TokenSeq};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token {token} out of vocabulary (size {vocab})")]
    TokenOutOfVocab { token: Token, vocab: usize },
    #[error("output sequence must be non-empty")]
    EmptyOutput,
    #[error("batch must be non-empty")]
    EmptyBatch,
    #[error("non-finite loss at sample {index}")]
    NonFinite { index: usize },
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence length {len} exceeds trunk limit {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
}

/// Hierarchy level, realized as a learned tag embedding prepended to the
/// trunk input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    High,
    Low,
}

impl Level {
    pub fn tag_row(self) -> usize {
        match self {
            Level::High => 0,
            Level::Low => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::High => "high",
            Level::Low => "low",
        }
    }
}

/// One supervised pair: conditioning tokens and the target output tokens,
/// routed through the trunk under the given hierarchy tag.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleInput {
    pub level: Level,
    pub conditioning: TokenSeq,
    pub output: TokenSeq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorKind {
    Gru,
    Attention,
}

impl AggregatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::Gru => "gru",
            AggregatorKind::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gru" => Some(AggregatorKind::Gru),
            "attention" => Some(AggregatorKind::Attention),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub max_seq_len: usize,
    pub aggregator: AggregatorKind,
    pub eos: Token,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, dim: usize) -> Self {
        ModelConfig {
            vocab_size,
            dim,
            max_seq_len: 192,
            aggregator: AggregatorKind::Gru,
            eos: 0,
        }
    }
}

/// All trainable parameters. Gradients and optimizer moments reuse the same
/// structure so a single flat iteration drives updates, Polyak blending, and
/// serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqModel {
    pub cfg: ModelConfig,
    pub embed: Mat,     // vocab x dim
    pub tag_embed: Mat, // 2 x dim
    // Gated recurrent aggregator.
    pub wz: Mat,
    pub uz: Mat,
    pub bz: Vec<f64>,
    pub wr: Mat,
    pub ur: Mat,
    pub br: Vec<f64>,
    pub wh: Mat,
    pub uh: Mat,
    pub bh: Vec<f64>,
    // Causal attention aggregator (used when cfg.aggregator == Attention).
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub bo: Vec<f64>,
    // Heads.
    pub proj_w: Mat, // vocab x dim
    pub proj_b: Vec<f64>,
    pub q_w: Vec<f64>,
    pub q_b: f64,
    pub v_w: Vec<f64>,
    pub v_b: f64,
}

impl SeqModel {
    /// All-zero parameters: uniform token distributions and zero values.
    pub fn zeros(cfg: ModelConfig) -> Self {
        let d = cfg.dim;
        let v = cfg.vocab_size;
        SeqModel {
            embed: Mat::zeros(v, d),
            tag_embed: Mat::zeros(2, d),
            wz: Mat::zeros(d, d),
            uz: Mat::zeros(d, d),
            bz: vec![0.0; d],
            wr: Mat::zeros(d, d),
            ur: Mat::zeros(d, d),
            br: vec![0.0; d],
            wh: Mat::zeros(d, d),
            uh: Mat::zeros(d, d),
            bh: vec![0.0; d],
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
            bo: vec![0.0; d],
            proj_w: Mat::zeros(v, d),
            proj_b: vec![0.0; v],
            q_w: vec![0.0; d],
            q_b: 0.0,
            v_w: vec![0.0; d],
            v_b: 0.0,
            cfg,
        }
    }

    /// Fan-in-scaled symmetric uniform init for embeddings and aggregator
    /// weights; projection and value heads start at zero.
    pub fn init(cfg: ModelConfig, seed: u64) -> Self {
        let mut m = SeqModel::zeros(cfg);
        let mut rng = crate::seed::rng(seed, "model-init", 0);
        let d = m.cfg.dim;
        let bound = 1.0 / (d as f64).sqrt();
        let mut fill = |mat: &mut Mat| {
            for x in &mut mat.data {
                *x = rng.gen_range(-bound..bound);
            }
        };
        fill(&mut m.embed);
        fill(&mut m.tag_embed);
        fill(&mut m.wz);
        fill(&mut m.uz);
        fill(&mut m.wr);
        fill(&mut m.ur);
        fill(&mut m.wh);
        fill(&mut m.uh);
        fill(&mut m.wq);
        fill(&mut m.wk);
        fill(&mut m.wv);
        fill(&mut m.wo);
        m
    }

    pub fn zeros_like(&self) -> Self {
        SeqModel::zeros(self.cfg.clone())
    }

    /// Named views over every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("embed", &self.embed.data),
            ("tag_embed", &self.tag_embed.data),
            ("wz", &self.wz.data),
            ("uz", &self.uz.data),
            ("bz", &self.bz),
            ("wr", &self.wr.data),
            ("ur", &self.ur.data),
            ("br", &self.br),
            ("wh", &self.wh.data),
            ("uh", &self.uh.data),
            ("bh", &self.bh),
            ("wq", &self.wq.data),
            ("wk", &self.wk.data),
            ("wv", &self.wv.data),
            ("wo", &self.wo.data),
            ("bo", &self.bo),
            ("proj_w", &self.proj_w.data),
            ("proj_b", &self.proj_b),
            ("q_w", &self.q_w),
            ("q_b", std::slice::from_ref(&self.q_b)),
            ("v_w", &self.v_w),
            ("v_b", std::slice::from_ref(&self.v_b)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("embed", &mut self.embed.data[..]),
            ("tag_embed", &mut self.tag_embed.data),
            ("wz", &mut self.wz.data),
            ("uz", &mut self.uz.data),
            ("bz", &mut self.bz),
            ("wr", &mut self.wr.data),
            ("ur", &mut self.ur.data),
            ("br", &mut self.br),
            ("wh", &mut self.wh.data),
            ("uh", &mut self.uh.data),
            ("bh", &mut self.bh),
            ("wq", &mut self.wq.data),
            ("wk", &mut self.wk.data),
            ("wv", &mut self.wv.data),
            ("wo", &mut self.wo.data),
            ("bo", &mut self.bo),
            ("proj_w", &mut self.proj_w.data),
            ("proj_b", &mut self.proj_b),
            ("q_w", &mut self.q_w),
            ("q_b", std::slice::from_mut(&mut self.q_b)),
            ("v_w", &mut self.v_w),
            ("v_b", std::slice::from_mut(&mut self.v_b)),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Read the flat parameter at `idx` (tensor order as in [`tensors`]).
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for (_, t) in self.tensors() {
            if idx < t.len() {
                return t[idx];
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn nudge_param(&mut self, mut idx: usize, delta: f64) {
        for (_, t) in self.tensors_mut() {
            if idx < t.len() {
                t[idx] += delta;
                return;
            }
            idx -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn same_shape(&self, other: &SeqModel) -> bool {
        self.cfg.vocab_size == other.cfg.vocab_size && self.cfg.dim == other.cfg.dim
    }

    /// Elementwise combine: `self[i] = f(self[i], other[i])`.
    pub fn zip_apply(&mut self, other: &SeqModel, mut f: impl FnMut(f64, f64) -> f64) {
        let mut theirs = other.tensors();
        for ((_, mine), (_, t)) in self.tensors_mut().into_iter().zip(theirs.drain(..)) {
            for (a, b) in mine.iter_mut().zip(t) {
                *a = f(*a, *b);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    /// Content hash over the exact parameter bits; used by the freeze checks.
    pub fn param_hash(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for (_, t) in self.tensors() {
            for x in t {
                for b in x.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

/// Parameters of the whole two-level agent.
///
/// `Shared` is the default: one model serves both levels via the hierarchy
/// tag. `Split` gives each level fully disjoint parameters, which is what
/// makes the strict low-level freeze testable during online adaptation.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyParams {
    Shared(SeqModel),
    Split { high: SeqModel, low: SeqModel },
}

impl PolicyParams {
    pub fn model(&self, level: Level) -> &SeqModel {
        match self {
            PolicyParams::Shared(m) => m,
            PolicyParams::Split { high, low } => match level {
                Level::High => high,
                Level::Low => low,
            },
        }
    }

    pub fn model_mut(&mut self, level: Level) -> &mut SeqModel {
        match self {
            PolicyParams::Shared(m) => m,
            PolicyParams::Split { high, low } => match level {
                Level::High => high,
                Level::Low => low,
            },
        }
    }

    /// Duplicate a shared model into disjoint per-level copies.
    pub fn into_split(self) -> PolicyParams {
        match self {
            PolicyParams::Shared(m) => PolicyParams::Split {
                high: m.clone(),
                low: m,
            },
            split => split,
        }
    }

    pub fn is_split(&self) -> bool {
        matches!(self, PolicyParams::Split { .. })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.model(Level::High).cfg
    }
}

/// Delayed critic copies used for Bellman targets: one snapshot read through
/// the Q head, one through the V head.
#[derive(Debug, Clone)]
pub struct TargetPair {
    pub q: SeqModel,
    pub v: SeqModel,
}

impl TargetPair {
    pub fn from_online(online: &SeqModel) -> Self {
        TargetPair {
            q: online.clone(),
            v: online.clone(),
        }
    }

    pub fn polyak(&mut self, online: &SeqModel, tau_soft: f64) -> Result<(), ModelError> {
        polyak_update(&mut self.q, online, tau_soft)?;
        polyak_update(&mut self.v, online, tau_soft)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_heads_are_zero_and_trunk_is_not() {
        let m = SeqModel::init(ModelConfig::new(16, 8), 3);
        assert!(m.proj_w.data.iter().all(|&x| x == 0.0));
        assert!(m.q_w.iter().all(|&x| x == 0.0));
        assert_eq!(m.q_b, 0.0);
        assert!(m.embed.data.iter().any(|&x| x != 0.0));
        assert!(m.all_finite());
    }

    #[test]
    fn param_indexing_covers_everything() {
        let mut m = SeqModel::init(ModelConfig::new(8, 4), 1);
        let n = m.param_count();
        let before = m.get_param(n - 1);
        m.nudge_param(n - 1, 0.5);
        assert_eq!(m.get_param(n - 1), before + 0.5);
        // v_b is the last flat parameter.
        assert_eq!(m.v_b, before + 0.5);
    }

    #[test]
    fn split_preserves_parameters() {
        let m = SeqModel::init(ModelConfig::new(8, 4), 1);
        let shared = PolicyParams::Shared(m.clone());
        let split = shared.into_split();
        assert_eq!(split.model(Level::High), &m);
        assert_eq!(split.model(Level::Low), &m);
    }
}
