//! Central finite-difference verification of the analytic gradients.
//!
//! Builds a small random model and random batches for each loss, then checks
//! every flat parameter with central differences. Used both by the `gradcheck`
//! CLI subcommand and by the acceptance suite.

use rand::Rng;

use super::grad::{
    actor_loss_grad, q_loss_grad, sft_loss_grad, v_loss_grad, CriticItem, LossSpec,
};
use super::{AggregatorKind, Level, ModelConfig, ModelError, RoleInput, SeqModel};
use crate::data::TokenSeq;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub loss: &'static str,
    pub aggregator: AggregatorKind,
    pub max_rel_err: f64,
    pub params_checked: usize,
}

fn random_seq(rng: &mut impl Rng, vocab: u16, len: usize) -> TokenSeq {
    TokenSeq::new((0..len).map(|_| rng.gen_range(1..vocab)).collect())
}

fn random_role(rng: &mut impl Rng, vocab: u16) -> RoleInput {
    let level = if rng.gen_bool(0.5) { Level::High } else { Level::Low };
    let cond_len = rng.gen_range(2..6);
    let out_len = rng.gen_range(1..4);
    RoleInput {
        level,
        conditioning: random_seq(rng, vocab, cond_len),
        output: random_seq(rng, vocab, out_len),
    }
}

fn random_critic_item(rng: &mut impl Rng, vocab: u16) -> CriticItem {
    let role = random_role(rng, vocab);
    let next_len = rng.gen_range(2..6);
    CriticItem {
        role,
        reward: rng.gen_range(-1.0..1.0),
        next_state: random_seq(rng, vocab, next_len),
        terminal: rng.gen_bool(0.25),
        window_len: rng.gen_range(1..4),
    }
}

/// Model with every head perturbed away from zero so each loss has nontrivial
/// curvature everywhere.
fn random_model(kind: AggregatorKind, seed: u64) -> SeqModel {
    let mut cfg = ModelConfig::new(12, 10);
    cfg.aggregator = kind;
    let mut m = SeqModel::init(cfg, seed);
    let mut rng = crate::seed::rng(seed, "gradcheck-heads", 0);
    for (_, t) in m.tensors_mut() {
        for x in t.iter_mut() {
            if *x == 0.0 {
                *x = rng.gen_range(-0.3..0.3);
            }
        }
    }
    m
}

/// Guarded relative error: |a - n| / max(|a| + |n|, floor). The floor keeps
/// finite-difference noise on near-zero gradients from registering as error.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-3)
}

struct Setup {
    model: SeqModel,
    target: SeqModel,
    roles: Vec<RoleInput>,
    critic: Vec<CriticItem>,
}

fn setup(kind: AggregatorKind, seed: u64) -> Setup {
    let model = random_model(kind, seed);
    let target = random_model(kind, seed ^ 0xabcd);
    let mut rng = crate::seed::rng(seed, "gradcheck-batch", 0);
    let roles: Vec<RoleInput> = (0..4).map(|_| random_role(&mut rng, 12)).collect();
    let critic: Vec<CriticItem> = (0..4).map(|_| random_critic_item(&mut rng, 12)).collect();
    Setup {
        model,
        target,
        roles,
        critic,
    }
}

fn loss_of(s: &Setup, spec: LossSpec, model: &SeqModel) -> Result<f64, ModelError> {
    match spec {
        LossSpec::Sft { length_lambda } => {
            Ok(sft_loss_grad(model, &s.roles, length_lambda, None)?.total)
        }
        LossSpec::Q { gamma, semi_mdp } => {
            q_loss_grad(model, &s.target, &s.critic, gamma, semi_mdp, None)
        }
        LossSpec::V { expectile_tau } => {
            v_loss_grad(model, &s.target, &s.critic, expectile_tau, None)
        }
        LossSpec::Actor {
            adv_lambda,
            weight_clip,
        } => {
            // Advantage weights come from the frozen target critics here so
            // they stay constant while the policy parameters move.
            Ok(
                actor_loss_grad(model, &s.target, &s.target, &s.roles, adv_lambda, weight_clip, None)?
                    .loss,
            )
        }
    }
}

fn grads_of(s: &Setup, spec: LossSpec) -> Result<SeqModel, ModelError> {
    let mut grads = s.model.zeros_like();
    match spec {
        LossSpec::Sft { length_lambda } => {
            sft_loss_grad(&s.model, &s.roles, length_lambda, Some(&mut grads))?;
        }
        LossSpec::Q { gamma, semi_mdp } => {
            q_loss_grad(&s.model, &s.target, &s.critic, gamma, semi_mdp, Some(&mut grads))?;
        }
        LossSpec::V { expectile_tau } => {
            v_loss_grad(&s.model, &s.target, &s.critic, expectile_tau, Some(&mut grads))?;
        }
        LossSpec::Actor {
            adv_lambda,
            weight_clip,
        } => {
            actor_loss_grad(
                &s.model,
                &s.target,
                &s.target,
                &s.roles,
                adv_lambda,
                weight_clip,
                Some(&mut grads),
            )?;
        }
    }
    Ok(grads)
}

/// Check one loss on one aggregator over every flat parameter.
pub fn check_loss(
    kind: AggregatorKind,
    spec: LossSpec,
    seed: u64,
    epsilon: f64,
) -> Result<GradCheckReport, ModelError> {
    let s = setup(kind, seed);
    let analytic = grads_of(&s, spec)?;
    let n = s.model.param_count();
    let mut max_err = 0.0f64;
    for idx in 0..n {
        let mut plus = s.model.clone();
        plus.nudge_param(idx, epsilon);
        let mut minus = s.model.clone();
        minus.nudge_param(idx, -epsilon);
        let numeric = (loss_of(&s, spec, &plus)? - loss_of(&s, spec, &minus)?) / (2.0 * epsilon);
        max_err = max_err.max(rel_err(analytic.get_param(idx), numeric));
    }
    Ok(GradCheckReport {
        loss: spec.name(),
        aggregator: kind,
        max_rel_err: max_err,
        params_checked: n,
    })
}

/// Default sweep: all four losses on both aggregators.
pub fn run_default(seed: u64) -> Result<Vec<GradCheckReport>, ModelError> {
    let specs = [
        LossSpec::Sft { length_lambda: 0.01 },
        LossSpec::Q {
            gamma: 0.99,
            semi_mdp: false,
        },
        LossSpec::V { expectile_tau: 0.7 },
        LossSpec::Actor {
            adv_lambda: 0.99,
            weight_clip: 100.0,
        },
    ];
    let mut out = Vec::new();
    for kind in [AggregatorKind::Gru, AggregatorKind::Attention] {
        for spec in specs {
            out.push(check_loss(kind, spec, seed, 1e-4)?);
        }
    }
    Ok(out)
}
