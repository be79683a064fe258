//! AdamW with decoupled weight decay, and Polyak target blending.

use super::{ModelError, SeqModel};

#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        AdamW {
            lr,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: SeqModel,
    pub v: SeqModel,
    pub step: u64,
}

impl OptState {
    pub fn new(params: &SeqModel) -> Self {
        OptState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update. Weight decay is decoupled: applied
/// directly to the parameters after the adaptive step.
pub fn adamw_step(
    params: &mut SeqModel,
    grads: &SeqModel,
    opt: &AdamW,
    state: &mut OptState,
) -> Result<(), ModelError> {
    if !params.same_shape(grads) {
        return Err(ModelError::ShapeMismatch(
            "gradient shape differs from parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);

    let mut p_tensors = params.tensors_mut();
    let mut m_tensors = state.m.tensors_mut();
    let mut v_tensors = state.v.tensors_mut();
    let g_tensors = grads.tensors();
    for i in 0..g_tensors.len() {
        let p = &mut p_tensors[i].1;
        let m = &mut m_tensors[i].1;
        let v = &mut v_tensors[i].1;
        let g = g_tensors[i].1;
        for j in 0..g.len() {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * g[j];
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
            p[j] -= opt.lr * opt.weight_decay * p[j];
        }
    }
    Ok(())
}

/// target <- (1 - tau_soft) * target + tau_soft * online, elementwise.
///
/// Computed as `t + tau * (o - t)` so that target == online is an exact
/// fixed point and tau in {0, 1} is exact.
pub fn polyak_update(
    target: &mut SeqModel,
    online: &SeqModel,
    tau_soft: f64,
) -> Result<(), ModelError> {
    if !target.same_shape(online) {
        return Err(ModelError::ShapeMismatch(
            "target shape differs from online parameters".into(),
        ));
    }
    if tau_soft == 1.0 {
        *target = online.clone();
        return Ok(());
    }
    target.zip_apply(online, |t, o| t + tau_soft * (o - t));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> SeqModel {
        SeqModel::init(ModelConfig::new(4, 2), 1)
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = tiny();
        let before = p.clone();
        let grads = p.zeros_like();
        let mut state = OptState::new(&p);
        adamw_step(&mut p, &grads, &AdamW::new(0.1), &mut state).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // Scalar parameter 0 with gradient 1: the bias-corrected first step
        // is -lr (up to eps).
        let mut p = tiny();
        p.q_b = 0.0;
        let mut grads = p.zeros_like();
        grads.q_b = 1.0;
        let mut state = OptState::new(&p);
        adamw_step(&mut p, &grads, &AdamW::new(0.1), &mut state).unwrap();
        assert!((p.q_b + 0.1).abs() < 1e-6, "got {}", p.q_b);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut p = tiny();
        p.v_b = 2.0;
        let grads = p.zeros_like();
        let mut opt = AdamW::new(0.1);
        opt.weight_decay = 0.1;
        let mut state = OptState::new(&p);
        adamw_step(&mut p, &grads, &opt, &mut state).unwrap();
        assert_eq!(p.v_b, 2.0 * (1.0 - 0.1 * 0.1));
    }

    #[test]
    fn polyak_blend() {
        let online = tiny();
        let mut target = online.zeros_like();
        target.q_b = 1.0;
        let mut online2 = online.zeros_like();
        online2.q_b = 2.0;

        let mut t = target.clone();
        polyak_update(&mut t, &online2, 0.2).unwrap();
        assert!((t.q_b - 1.2).abs() < 1e-12);

        let mut t = target.clone();
        polyak_update(&mut t, &online2, 1.0).unwrap();
        assert_eq!(t, online2);

        let mut t = target.clone();
        polyak_update(&mut t, &online2, 0.0).unwrap();
        assert_eq!(t, target);
    }

    #[test]
    fn polyak_fixed_point_and_geometric_rate() {
        let online = SeqModel::init(ModelConfig::new(4, 2), 9);
        let mut t = online.clone();
        polyak_update(&mut t, &online, 0.3).unwrap();
        assert_eq!(t, online);

        // Repeated updates close the gap geometrically at rate (1 - tau).
        let mut t = online.zeros_like();
        let tau = 0.2;
        let idx = online
            .embed
            .data
            .iter()
            .position(|&x| x.abs() > 1e-3)
            .unwrap();
        for _ in 0..5 {
            let prev_gap = online.embed.data[idx] - t.embed.data[idx];
            polyak_update(&mut t, &online, tau).unwrap();
            let new_gap = online.embed.data[idx] - t.embed.data[idx];
            assert!((new_gap - (1.0 - tau) * prev_gap).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut a = SeqModel::init(ModelConfig::new(4, 2), 1);
        let b = SeqModel::init(ModelConfig::new(6, 2), 1);
        assert!(matches!(
            polyak_update(&mut a, &b, 0.5),
            Err(ModelError::ShapeMismatch(_))
        ));
    }
}
