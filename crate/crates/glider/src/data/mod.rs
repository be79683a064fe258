//! Hierarchical trajectory data model.
//!
//! Flat environment trajectories are decomposed into a two-level schema:
//! high-level transitions spanning one subtask window each, and low-level
//! transitions for every primitive step with a binary subtask-completion
//! reward. Datasets carry expert/medium source tags and can be mixed at a
//! configurable ratio.

mod decompose;
mod mix;
mod serial;

pub use decompose::{aggregate_window_reward, decompose, flatten};
pub use mix::mix_datasets;
pub use serial::{read_dataset, read_dataset_files, write_dataset, write_dataset_files};

use thiserror::Error;

/// Token identifier inside the fixed vocabulary.
pub type Token = u16;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty reward window")]
    InvalidWindow,
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("subtask label must be non-empty")]
    EmptyLabel,
    #[error("mixture ratio 0:0 is invalid")]
    InvalidRatio,
    #[error("{side} dataset is empty but its ratio component is nonzero")]
    EmptySource { side: &'static str },
    #[error("ratio {0}:{1} infeasible for {2} expert / {3} medium trajectories")]
    InfeasibleRatio(u32, u32, usize, usize),
    #[error("datasets disagree on vocab/c_max ({0} vs {1})")]
    Incompatible(String, String),
    #[error("token {token} out of vocabulary (size {vocab})")]
    TokenOutOfRange { token: Token, vocab: u32 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("dataset is missing the {0} level")]
    MissingLevel(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sequence of token identifiers, each below the vocabulary size.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    pub fn new(tokens: Vec<Token>) -> Self {
        TokenSeq(tokens)
    }

    pub fn empty() -> Self {
        TokenSeq(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Token] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Token> {
        self.0.iter()
    }

    pub fn push(&mut self, t: Token) {
        self.0.push(t);
    }

    /// All tokens below `vocab`, length within `max_len`.
    pub fn validate(&self, vocab: u32, max_len: usize) -> Result<(), DataError> {
        if self.0.len() > max_len {
            return Err(DataError::Parse {
                line: 0,
                msg: format!("sequence length {} exceeds max {}", self.0.len(), max_len),
            });
        }
        for &t in &self.0 {
            if u32::from(t) >= vocab {
                return Err(DataError::TokenOutOfRange { token: t, vocab });
            }
        }
        Ok(())
    }

    /// Concatenation helper used when building model conditioning inputs.
    pub fn concat(parts: &[&TokenSeq]) -> TokenSeq {
        let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            out.extend_from_slice(&p.0);
        }
        TokenSeq(out)
    }
}

impl From<Vec<Token>> for TokenSeq {
    fn from(v: Vec<Token>) -> Self {
        TokenSeq(v)
    }
}

impl<'a> IntoIterator for &'a TokenSeq {
    type Item = &'a Token;
    type IntoIter = std::slice::Iter<'a, Token>;
    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Origin of a trajectory: scripted oracle or intermediate-policy sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Expert,
    Medium,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Expert => "expert",
            SourceTag::Medium => "medium",
        }
    }

    pub fn parse(s: &str) -> Option<SourceTag> {
        match s {
            "expert" => Some(SourceTag::Expert),
            "medium" => Some(SourceTag::Medium),
            _ => None,
        }
    }
}

/// One primitive step under a standing subtask goal.
#[derive(Debug, Clone, PartialEq)]
pub struct LowTransition {
    pub goal: TokenSeq,
    pub obs: TokenSeq,
    pub action: TokenSeq,
    /// Binary subtask-completion reward, exactly 0 or 1.
    pub intrinsic_reward: u8,
    pub next_obs: TokenSeq,
    pub terminal: bool,
}

impl LowTransition {
    pub fn reward(&self) -> f64 {
        f64::from(self.intrinsic_reward)
    }
}

/// One subtask window: goal proposed, environment rewards summed over it.
#[derive(Debug, Clone, PartialEq)]
pub struct HighTransition {
    pub task: TokenSeq,
    pub obs: TokenSeq,
    pub goal: TokenSeq,
    /// Exact undiscounted sum of the window's environment rewards.
    pub window_reward: f64,
    pub next_obs: TokenSeq,
    pub window_len: u32,
    pub terminal: bool,
}

/// Raw single-level trajectory as produced by environment rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatStep {
    pub obs: TokenSeq,
    pub action: TokenSeq,
    pub env_reward: f64,
    pub subtask_label: TokenSeq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatTrajectory {
    pub task: TokenSeq,
    pub steps: Vec<FlatStep>,
    /// Observation after the final step.
    pub final_obs: TokenSeq,
    pub done: bool,
}

impl FlatTrajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.env_reward).sum()
    }
}

/// One episode's worth of paired high- and low-level transitions.
///
/// The i-th high transition covers the run of low transitions delimited by
/// the prefix sums of `window_len`; `low` is empty for flat (single-level)
/// trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct HierTrajectory {
    pub source: SourceTag,
    pub high: Vec<HighTransition>,
    pub low: Vec<LowTransition>,
}

impl HierTrajectory {
    /// (start, end) index ranges into `low` covered by each high transition.
    pub fn window_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.high.len());
        let mut start = 0usize;
        for h in &self.high {
            let end = start + h.window_len as usize;
            out.push((start, end));
            start = end;
        }
        out
    }
}

/// Tagged collection of hierarchical trajectories with mixture metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct HierDataset {
    pub vocab_size: u32,
    pub c_max: u32,
    pub trajectories: Vec<HierTrajectory>,
    pub mixture_ratio: Option<(u32, u32)>,
}

impl HierDataset {
    pub fn new(vocab_size: u32, c_max: u32) -> Self {
        HierDataset {
            vocab_size,
            c_max,
            trajectories: Vec::new(),
            mixture_ratio: None,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn count_by_source(&self, tag: SourceTag) -> usize {
        self.trajectories.iter().filter(|t| t.source == tag).count()
    }

    pub fn high_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.high.len()).sum()
    }

    pub fn low_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.low.len()).sum()
    }

    pub fn all_high(&self) -> impl Iterator<Item = &HighTransition> {
        self.trajectories.iter().flat_map(|t| t.high.iter())
    }

    pub fn all_low(&self) -> impl Iterator<Item = &LowTransition> {
        self.trajectories.iter().flat_map(|t| t.low.iter())
    }

    /// Dataset-level tag for the file header.
    pub fn source_label(&self) -> &'static str {
        let mut expert = false;
        let mut medium = false;
        for t in &self.trajectories {
            match t.source {
                SourceTag::Expert => expert = true,
                SourceTag::Medium => medium = true,
            }
        }
        match (expert, medium) {
            (true, false) => "expert",
            (false, true) => "medium",
            (true, true) => "mixed",
            (false, false) => "empty",
        }
    }

    /// Check structural invariants: token ranges, window bookkeeping, binary
    /// intrinsic rewards, and mixture counts when a ratio is recorded.
    pub fn validate(&self) -> Result<(), DataError> {
        let max_len = usize::MAX;
        for t in &self.trajectories {
            let span: u32 = t.high.iter().map(|h| h.window_len).sum();
            if span as usize != t.low.len() && !t.low.is_empty() {
                return Err(DataError::Parse {
                    line: 0,
                    msg: format!(
                        "window lengths sum to {} but trajectory has {} low transitions",
                        span,
                        t.low.len()
                    ),
                });
            }
            for h in &t.high {
                h.task.validate(self.vocab_size, max_len)?;
                h.obs.validate(self.vocab_size, max_len)?;
                h.goal.validate(self.vocab_size, max_len)?;
                h.next_obs.validate(self.vocab_size, max_len)?;
                if h.window_len == 0 || h.window_len > self.c_max {
                    return Err(DataError::Parse {
                        line: 0,
                        msg: format!("window_len {} outside [1, {}]", h.window_len, self.c_max),
                    });
                }
                if !h.window_reward.is_finite()
                    || h.window_reward < 0.0
                    || h.window_reward > f64::from(self.c_max)
                {
                    return Err(DataError::Parse {
                        line: 0,
                        msg: format!("window_reward {} outside [0, c_max]", h.window_reward),
                    });
                }
            }
            for l in &t.low {
                l.goal.validate(self.vocab_size, max_len)?;
                l.obs.validate(self.vocab_size, max_len)?;
                l.action.validate(self.vocab_size, max_len)?;
                l.next_obs.validate(self.vocab_size, max_len)?;
                if l.intrinsic_reward > 1 {
                    return Err(DataError::Parse {
                        line: 0,
                        msg: format!("intrinsic_reward {} not binary", l.intrinsic_reward),
                    });
                }
            }
        }
        if let Some((a, b)) = self.mixture_ratio {
            let ne = self.count_by_source(SourceTag::Expert) as u64;
            let nm = self.count_by_source(SourceTag::Medium) as u64;
            if ne * u64::from(b) != nm * u64::from(a) {
                return Err(DataError::Parse {
                    line: 0,
                    msg: format!("counts {ne}:{nm} inconsistent with ratio {a}:{b}"),
                });
            }
        }
        Ok(())
    }
}
