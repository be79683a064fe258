//! glider: a hierarchical offline-RL pipeline for language-conditioned agents.
//!
//! The pipeline has three stages over a built-in deterministic text world:
//! behavior cloning of a two-level token policy, offline actor-critic
//! refinement with expectile value learning and advantage-weighted updates,
//! and online adaptation that reuses the pretrained low-level skills.

pub mod data;
pub mod model;
pub mod seed;
