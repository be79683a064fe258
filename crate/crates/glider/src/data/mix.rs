//! Seed-deterministic mixing of expert and medium datasets.

use rand::seq::SliceRandom;

use super::{DataError, HierDataset, SourceTag};
use crate::seed;

/// Mix expert and medium trajectories at `ratio` = (expert, medium) parts.
///
/// Selects `a*k` expert and `b*k` medium trajectories for the largest
/// feasible `k`, with seed-deterministic sampling and output ordering.
pub fn mix_datasets(
    expert: &HierDataset,
    medium: &HierDataset,
    ratio: (u32, u32),
    seed_value: u64,
) -> Result<HierDataset, DataError> {
    let (a, b) = ratio;
    if a == 0 && b == 0 {
        return Err(DataError::InvalidRatio);
    }
    if a > 0 && expert.is_empty() {
        return Err(DataError::EmptySource { side: "expert" });
    }
    if b > 0 && medium.is_empty() {
        return Err(DataError::EmptySource { side: "medium" });
    }
    if a > 0 && b > 0 && (expert.vocab_size, expert.c_max) != (medium.vocab_size, medium.c_max) {
        return Err(DataError::Incompatible(
            format!("vocab={} c_max={}", expert.vocab_size, expert.c_max),
            format!("vocab={} c_max={}", medium.vocab_size, medium.c_max),
        ));
    }

    let ne = expert.len();
    let nm = medium.len();
    let k = match (a, b) {
        (0, b) => nm / b as usize,
        (a, 0) => ne / a as usize,
        (a, b) => (ne / a as usize).min(nm / b as usize),
    };
    if k == 0 {
        return Err(DataError::InfeasibleRatio(a, b, ne, nm));
    }
    let take_e = a as usize * k;
    let take_m = b as usize * k;

    let mut rng = seed::rng(seed_value, "mix", 0);
    let mut pick = |n: usize, take: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx.truncate(take);
        idx
    };

    let chosen_e = pick(ne, take_e);
    let chosen_m = pick(nm, take_m);

    let template = if a > 0 { expert } else { medium };
    let mut out = HierDataset::new(template.vocab_size, template.c_max);
    out.mixture_ratio = Some(ratio);
    for i in chosen_e {
        debug_assert_eq!(expert.trajectories[i].source, SourceTag::Expert);
        out.trajectories.push(expert.trajectories[i].clone());
    }
    for i in chosen_m {
        debug_assert_eq!(medium.trajectories[i].source, SourceTag::Medium);
        out.trajectories.push(medium.trajectories[i].clone());
    }
    out.trajectories.shuffle(&mut rng);
    Ok(out)
}
