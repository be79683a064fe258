//! Decomposition of flat trajectories into the two-level schema.

use super::{
    DataError, FlatTrajectory, HierTrajectory, HighTransition, LowTransition, SourceTag, TokenSeq,
};

/// Undiscounted exact sum of a window's environment rewards.
pub fn aggregate_window_reward(rewards: &[f64]) -> Result<f64, DataError> {
    if rewards.is_empty() {
        return Err(DataError::InvalidWindow);
    }
    Ok(rewards.iter().sum())
}

/// Split a flat trajectory into high-level window transitions and low-level
/// step transitions.
///
/// Contiguous runs of equal `subtask_label` form one window each. Windows
/// longer than `c_max` are split into multiple high transitions sharing the
/// same goal. The completion predicate is evaluated once per labeled window,
/// on the observation after its final step; a positive result places a single
/// intrinsic reward of 1 on that final step.
pub fn decompose(
    flat: &FlatTrajectory,
    source: SourceTag,
    c_max: u32,
    completion: &dyn Fn(&TokenSeq, &TokenSeq) -> bool,
) -> Result<HierTrajectory, DataError> {
    if flat.steps.is_empty() {
        return Err(DataError::EmptyTrajectory);
    }
    if flat.steps.iter().any(|s| s.subtask_label.is_empty()) {
        return Err(DataError::EmptyLabel);
    }

    let n = flat.steps.len();
    let next_obs = |i: usize| -> &TokenSeq {
        if i + 1 < n {
            &flat.steps[i + 1].obs
        } else {
            &flat.final_obs
        }
    };

    // Labeled windows: (start, end) over step indices.
    let mut windows: Vec<(usize, usize)> = Vec::new();
    let mut start = 0usize;
    for i in 1..n {
        if flat.steps[i].subtask_label != flat.steps[start].subtask_label {
            windows.push((start, i));
            start = i;
        }
    }
    windows.push((start, n));

    let mut high = Vec::new();
    let mut low = Vec::with_capacity(n);
    for &(ws, we) in &windows {
        let goal = flat.steps[ws].subtask_label.clone();
        let completed = completion(&goal, next_obs(we - 1));

        for (i, step) in flat.steps[ws..we].iter().enumerate() {
            let idx = ws + i;
            let is_window_last = idx == we - 1;
            low.push(LowTransition {
                goal: goal.clone(),
                obs: step.obs.clone(),
                action: step.action.clone(),
                intrinsic_reward: u8::from(is_window_last && completed),
                next_obs: next_obs(idx).clone(),
                terminal: idx == n - 1 && flat.done,
            });
        }

        let mut cs = ws;
        while cs < we {
            let ce = (cs + c_max as usize).min(we);
            let reward = aggregate_window_reward(
                &flat.steps[cs..ce].iter().map(|s| s.env_reward).collect::<Vec<_>>(),
            )?;
            high.push(HighTransition {
                task: flat.task.clone(),
                obs: flat.steps[cs].obs.clone(),
                goal: goal.clone(),
                window_reward: reward,
                next_obs: next_obs(ce - 1).clone(),
                window_len: (ce - cs) as u32,
                terminal: ce == n && flat.done,
            });
            cs = ce;
        }
    }

    Ok(HierTrajectory { source, high, low })
}

/// Degenerate single-level form used by the non-hierarchical baselines: each
/// primitive step becomes its own high transition (window length 1, goal =
/// the primitive action, reward = the step's environment reward).
pub fn flatten(flat: &FlatTrajectory, source: SourceTag) -> Result<HierTrajectory, DataError> {
    if flat.steps.is_empty() {
        return Err(DataError::EmptyTrajectory);
    }
    let n = flat.steps.len();
    let high = flat
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| HighTransition {
            task: flat.task.clone(),
            obs: step.obs.clone(),
            goal: step.action.clone(),
            window_reward: step.env_reward,
            next_obs: if i + 1 < n {
                flat.steps[i + 1].obs.clone()
            } else {
                flat.final_obs.clone()
            },
            window_len: 1,
            terminal: i == n - 1 && flat.done,
        })
        .collect();
    Ok(HierTrajectory {
        source,
        high,
        low: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[u16]) -> TokenSeq {
        TokenSeq::new(tokens.to_vec())
    }

    fn step(obs: u16, action: u16, reward: f64, label: &[u16]) -> super::super::FlatStep {
        super::super::FlatStep {
            obs: seq(&[obs]),
            action: seq(&[action]),
            env_reward: reward,
            subtask_label: seq(label),
        }
    }

    #[test]
    fn window_reward_is_exact_sum() {
        let r = aggregate_window_reward(&[0.08, 0.0, 0.0]).unwrap();
        assert!((r - 0.08).abs() < 1e-12);
        assert_eq!(aggregate_window_reward(&[0.0]).unwrap(), 0.0);

        // Independent accumulation over the listed per-step rewards.
        let rewards = [0.09, 0.08, 0.0, 0.5];
        let mut oracle = 0.0;
        for r in rewards {
            oracle += r;
        }
        let got = aggregate_window_reward(&rewards).unwrap();
        assert_eq!(got, oracle);
        assert!((got - 0.67).abs() < 1e-12);

        assert!(matches!(
            aggregate_window_reward(&[]),
            Err(DataError::InvalidWindow)
        ));
    }

    #[test]
    fn three_windows_eight_steps() {
        let flat = FlatTrajectory {
            task: seq(&[1]),
            steps: vec![
                step(10, 20, 0.09, &[2]),
                step(11, 21, 0.08, &[2]),
                step(12, 22, 0.0, &[2]),
                step(13, 23, 0.5, &[2]),
                step(14, 24, 0.08, &[3]),
                step(15, 25, 0.0, &[3]),
                step(16, 26, 0.0, &[3]),
                step(17, 27, 0.17, &[4]),
            ],
            final_obs: seq(&[18]),
            done: true,
        };
        let hier = decompose(&flat, SourceTag::Expert, 8, &|_, _| true).unwrap();
        assert_eq!(hier.high.len(), 3);
        assert_eq!(hier.low.len(), 8);
        assert!((hier.high[0].window_reward - 0.67).abs() < 1e-12);
        assert!((hier.high[1].window_reward - 0.08).abs() < 1e-12);
        assert!((hier.high[2].window_reward - 0.17).abs() < 1e-12);

        // Reward conservation.
        let high_sum: f64 = hier.high.iter().map(|h| h.window_reward).sum();
        assert!((high_sum - flat.total_reward()).abs() < 1e-9);

        // Exactly one intrinsic reward per window, on the window's last step.
        let ones: Vec<usize> = hier
            .low
            .iter()
            .enumerate()
            .filter(|(_, l)| l.intrinsic_reward == 1)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(ones, vec![3, 6, 7]);

        // Terminal flag only on the episode's last transitions.
        assert!(hier.low[7].terminal);
        assert!(hier.low[..7].iter().all(|l| !l.terminal));
        assert!(hier.high[2].terminal);
        assert!(!hier.high[0].terminal && !hier.high[1].terminal);
    }

    #[test]
    fn single_step_window() {
        let flat = FlatTrajectory {
            task: seq(&[1]),
            steps: vec![step(10, 20, 0.17, &[2])],
            final_obs: seq(&[11]),
            done: true,
        };
        let hier = decompose(&flat, SourceTag::Expert, 8, &|_, _| true).unwrap();
        assert_eq!(hier.high.len(), 1);
        assert_eq!(hier.low.len(), 1);
        assert!((hier.high[0].window_reward - 0.17).abs() < 1e-12);
        assert_eq!(hier.high[0].window_len, 1);
    }

    #[test]
    fn failed_predicate_zeroes_intrinsic() {
        let flat = FlatTrajectory {
            task: seq(&[1]),
            steps: vec![step(10, 20, 0.1, &[2]), step(11, 21, 0.2, &[2])],
            final_obs: seq(&[12]),
            done: false,
        };
        let hier = decompose(&flat, SourceTag::Medium, 8, &|_, _| false).unwrap();
        assert!(hier.low.iter().all(|l| l.intrinsic_reward == 0));
    }

    #[test]
    fn long_window_splits_at_c_max() {
        let steps: Vec<_> = (0..10).map(|i| step(i, 20, 0.05, &[2])).collect();
        let flat = FlatTrajectory {
            task: seq(&[1]),
            steps,
            final_obs: seq(&[99]),
            done: true,
        };
        let hier = decompose(&flat, SourceTag::Expert, 4, &|_, _| true).unwrap();
        assert_eq!(hier.high.len(), 3); // 4 + 4 + 2
        assert_eq!(
            hier.high.iter().map(|h| h.window_len).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
        assert!(hier.high.iter().all(|h| h.goal == seq(&[2])));
        let high_sum: f64 = hier.high.iter().map(|h| h.window_reward).sum();
        assert!((high_sum - 0.5).abs() < 1e-9);
        // Single completion reward despite the split.
        let ones = hier.low.iter().filter(|l| l.intrinsic_reward == 1).count();
        assert_eq!(ones, 1);
        assert_eq!(hier.low[9].intrinsic_reward, 1);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let empty = FlatTrajectory {
            task: seq(&[1]),
            steps: vec![],
            final_obs: seq(&[2]),
            done: false,
        };
        assert!(matches!(
            decompose(&empty, SourceTag::Expert, 8, &|_, _| true),
            Err(DataError::EmptyTrajectory)
        ));

        let unlabeled = FlatTrajectory {
            task: seq(&[1]),
            steps: vec![step(10, 20, 0.0, &[])],
            final_obs: seq(&[2]),
            done: false,
        };
        assert!(matches!(
            decompose(&unlabeled, SourceTag::Expert, 8, &|_, _| true),
            Err(DataError::EmptyLabel)
        ));
    }

    #[test]
    fn flatten_is_one_window_per_step() {
        let flat = FlatTrajectory {
            task: seq(&[1]),
            steps: vec![step(10, 20, 0.3, &[2]), step(11, 21, 0.7, &[2])],
            final_obs: seq(&[12]),
            done: true,
        };
        let hier = flatten(&flat, SourceTag::Expert).unwrap();
        assert_eq!(hier.high.len(), 2);
        assert!(hier.low.is_empty());
        assert_eq!(hier.high[0].goal, seq(&[20]));
        assert_eq!(hier.high[0].window_len, 1);
        assert_eq!(hier.high[1].next_obs, seq(&[12]));
        assert!(hier.high[1].terminal);
    }
}
