//! Analytic gradients for the four training losses.
//!
//! Each loss has a forward-only mode (pass `None` for `grads`) used by the
//! finite-difference checker, and a gradient mode accumulating into a mirror
//! parameter structure. Advantage weights and Bellman targets are constants
//! with respect to the gradients.

use super::math::{axpy, dot, log_softmax, softmax};
use super::ops::logits_from_hidden;
use super::trunk;
use super::{Level, ModelError, RoleInput, SeqModel};
use crate::data::TokenSeq;

/// One critic transition: (s, u, r, s', terminal) at either hierarchy level.
/// `window_len` is 1 for low-level items and the window length for high-level
/// ones (used by the semi-MDP discount variant).
#[derive(Debug, Clone)]
pub struct CriticItem {
    pub role: RoleInput,
    pub reward: f64,
    pub next_state: TokenSeq,
    pub terminal: bool,
    pub window_len: u32,
}

impl CriticItem {
    pub fn state(&self) -> &TokenSeq {
        &self.role.conditioning
    }

    pub fn action(&self) -> &TokenSeq {
        &self.role.output
    }

    pub fn level(&self) -> Level {
        self.role.level
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SftLossParts {
    pub total: f64,
    pub high_sum: f64,
    pub low_sum: f64,
    pub high_count: usize,
    pub low_count: usize,
}

impl SftLossParts {
    pub fn high_mean(&self) -> f64 {
        if self.high_count == 0 {
            0.0
        } else {
            self.high_sum / self.high_count as f64
        }
    }

    pub fn low_mean(&self) -> f64 {
        if self.low_count == 0 {
            0.0
        } else {
            self.low_sum / self.low_count as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ActorLossStats {
    pub loss: f64,
    pub mean_weight: f64,
    pub max_weight: f64,
}

/// Shared path for every weighted log-likelihood loss: accumulates
/// `-(w_b / B) * log pi(output_b | conditioning_b)` and its gradients.
fn weighted_nll(
    model: &SeqModel,
    items: &[(&RoleInput, f64)],
    batch_size: f64,
    mut grads: Option<&mut SeqModel>,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for (index, (role, weight)) in items.iter().enumerate() {
        let n = role.output.len();
        if n == 0 {
            return Err(ModelError::EmptyOutput);
        }
        for &t in role.output.iter() {
            if usize::from(t) >= model.cfg.vocab_size {
                return Err(ModelError::TokenOutOfVocab {
                    token: t,
                    vocab: model.cfg.vocab_size,
                });
            }
        }
        let mut tokens = Vec::with_capacity(role.conditioning.len() + n - 1);
        tokens.extend_from_slice(role.conditioning.as_slice());
        tokens.extend_from_slice(&role.output.as_slice()[..n - 1]);
        let cache = trunk::forward(model, role.level, &tokens)?;
        let cond_len = role.conditioning.len();

        let mut lp = 0.0;
        let mut dhs: Vec<Vec<f64>> = vec![vec![0.0; model.cfg.dim]; cache.inputs.len()];
        let scale = weight / batch_size;
        for (i, &w) in role.output.iter().enumerate() {
            let h = &cache.hs[cond_len + i];
            let logits = logits_from_hidden(model, h);
            let lsm = log_softmax(&logits);
            lp += lsm[usize::from(w)];
            if let Some(g) = grads.as_deref_mut() {
                // d(-w/B * log p)/dlogits = w/B * (softmax - onehot)
                let mut dlogits = softmax(&logits);
                dlogits[usize::from(w)] -= 1.0;
                for d in &mut dlogits {
                    *d *= scale;
                }
                g.proj_w.add_outer(&dlogits, h, 1.0);
                axpy(&mut g.proj_b, 1.0, &dlogits);
                axpy(&mut dhs[cond_len + i], 1.0, &model.proj_w.matvec_t(&dlogits));
            }
        }
        let sample_loss = -weight * lp;
        if !sample_loss.is_finite() {
            return Err(ModelError::NonFinite { index });
        }
        total += sample_loss / batch_size;
        if let Some(g) = grads.as_deref_mut() {
            trunk::backward(model, &cache, &mut dhs, g);
        }
    }
    Ok(total)
}

/// Behavior-cloning loss: mean over the batch of
/// `-log pi(output | conditioning) + length_lambda * |output|`.
pub fn sft_loss_grad(
    model: &SeqModel,
    batch: &[RoleInput],
    length_lambda: f64,
    mut grads: Option<&mut SeqModel>,
) -> Result<SftLossParts, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let b = batch.len() as f64;
    let mut parts = SftLossParts::default();
    for role in batch {
        let nll = weighted_nll(
            model,
            &[(role, 1.0)],
            b,
            grads.as_deref_mut(),
        )? * b;
        let sample_loss = nll + length_lambda * role.output.len() as f64;
        match role.level {
            Level::High => {
                parts.high_sum += sample_loss;
                parts.high_count += 1;
            }
            Level::Low => {
                parts.low_sum += sample_loss;
                parts.low_count += 1;
            }
        }
    }
    parts.total = (parts.high_sum + parts.low_sum) / b;
    Ok(parts)
}

fn scalar_head_grad(
    model: &SeqModel,
    cache: &trunk::TrunkCache,
    dvalue: f64,
    head: HeadKind,
    grads: &mut SeqModel,
) {
    let h = cache.hs.last().expect("trunk always has the tag position");
    let (w, gw, gb) = match head {
        HeadKind::Q => (&model.q_w, &mut grads.q_w, &mut grads.q_b),
        HeadKind::V => (&model.v_w, &mut grads.v_w, &mut grads.v_b),
    };
    axpy(gw, dvalue, h);
    *gb += dvalue;
    let mut dhs: Vec<Vec<f64>> = vec![vec![0.0; model.cfg.dim]; cache.inputs.len()];
    let last = dhs.len() - 1;
    axpy(&mut dhs[last], dvalue, w);
    trunk::backward(model, cache, &mut dhs, grads);
}

enum HeadKind {
    Q,
    V,
}

fn state_action_tokens(item: &CriticItem) -> Vec<crate::data::Token> {
    let mut tokens = Vec::with_capacity(item.state().len() + item.action().len());
    tokens.extend_from_slice(item.state().as_slice());
    tokens.extend_from_slice(item.action().as_slice());
    tokens
}

/// Bellman regression loss for the Q head: mean squared error against
/// `r + gamma * V̄(s')`, with the bootstrap masked on terminal transitions.
pub fn q_loss_grad(
    model: &SeqModel,
    target_v: &SeqModel,
    batch: &[CriticItem],
    gamma: f64,
    semi_mdp: bool,
    mut grads: Option<&mut SeqModel>,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for (index, item) in batch.iter().enumerate() {
        let target = if item.terminal {
            item.reward
        } else {
            let g = if semi_mdp {
                gamma.powi(item.window_len as i32)
            } else {
                gamma
            };
            item.reward + g * super::ops::v_value(target_v, item.level(), &item.next_state)?
        };
        if !target.is_finite() {
            return Err(ModelError::NonFinite { index });
        }
        let cache = trunk::forward(model, item.level(), &state_action_tokens(item))?;
        let h = cache.hs.last().unwrap();
        let q = dot(&model.q_w, h) + model.q_b;
        let diff = q - target;
        loss += diff * diff / b;
        if let Some(g) = grads.as_deref_mut() {
            scalar_head_grad(model, &cache, 2.0 * diff / b, HeadKind::Q, g);
        }
    }
    Ok(loss)
}

/// Expectile regression loss for the V head against the delayed Q estimate:
/// mean of `|tau - 1(x < 0)| * x^2` with `x = Q̄(s, u) - V(s)`.
pub fn v_loss_grad(
    model: &SeqModel,
    target_q: &SeqModel,
    batch: &[CriticItem],
    expectile_tau: f64,
    mut grads: Option<&mut SeqModel>,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for item in batch {
        let q_bar =
            super::ops::q_value(target_q, item.level(), item.state(), item.action())?;
        let cache = trunk::forward(model, item.level(), item.state().as_slice())?;
        let h = cache.hs.last().unwrap();
        let v = dot(&model.v_w, h) + model.v_b;
        let x = q_bar - v;
        let weight = if x < 0.0 {
            1.0 - expectile_tau
        } else {
            expectile_tau
        };
        loss += weight * x * x / b;
        if let Some(g) = grads.as_deref_mut() {
            // dL/dV = -2 * weight * x / B (weight constant on each side of 0).
            scalar_head_grad(model, &cache, -2.0 * weight * x / b, HeadKind::V, g);
        }
    }
    Ok(loss)
}

/// Advantage-weighted likelihood loss: mean of
/// `-min(exp((Q - V) / adv_lambda), weight_clip) * log pi(u | s)`.
/// Weights are data, not differentiated.
pub fn actor_loss_grad(
    model: &SeqModel,
    q_est: &SeqModel,
    v_est: &SeqModel,
    batch: &[RoleInput],
    adv_lambda: f64,
    weight_clip: f64,
    mut grads: Option<&mut SeqModel>,
) -> Result<ActorLossStats, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let b = batch.len() as f64;
    let log_clip = weight_clip.ln();
    let mut stats = ActorLossStats::default();
    for role in batch {
        let q = super::ops::q_value(q_est, role.level, &role.conditioning, &role.output)?;
        let v = super::ops::v_value(v_est, role.level, &role.conditioning)?;
        let advantage = q - v;
        // min(exp(a / lambda), clip) computed in log space to avoid overflow.
        let weight = (advantage / adv_lambda).min(log_clip).exp();
        stats.mean_weight += weight / b;
        stats.max_weight = stats.max_weight.max(weight);
        stats.loss += weighted_nll(model, &[(role, weight)], b, grads.as_deref_mut())?;
    }
    Ok(stats)
}

/// Loss selector mirror for the gradient entry point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossSpec {
    Sft { length_lambda: f64 },
    Q { gamma: f64, semi_mdp: bool },
    V { expectile_tau: f64 },
    Actor { adv_lambda: f64, weight_clip: f64 },
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Sft { .. } => "sft",
            LossSpec::Q { .. } => "q",
            LossSpec::V { .. } => "v",
            LossSpec::Actor { .. } => "actor",
        }
    }
}
