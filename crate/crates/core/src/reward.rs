//! Rollout rewards: output format, CoT length and in-batch retrieval rank.

use crate::error::{LremError, Result};
use crate::textcodec::{SpecialIds, TokenSeq};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub beta_format: f64,
    pub beta_length: f64,
    pub beta_accuracy: f64,
    /// Maximum CoT length that still earns the length reward.
    pub length_threshold: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            beta_format: 0.5,
            beta_length: 0.2,
            beta_accuracy: 1.0,
            length_threshold: 16,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.beta_format, self.beta_length, self.beta_accuracy]
            .iter()
            .any(|b| !(*b >= 0.0))
        {
            return Err(LremError::Config("reward weights must be >= 0".into()));
        }
        if self.length_threshold == 0 {
            return Err(LremError::Config("length threshold must be >= 1".into()));
        }
        Ok(())
    }

    pub fn max_total(&self) -> f64 {
        self.beta_format + self.beta_length + self.beta_accuracy
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub format: f64,
    pub length: f64,
    pub accuracy: f64,
    pub total: f64,
}

/// 1 iff the continuation is `cot... </think> <emb>` with no special token inside the CoT.
pub fn format_reward(generated: &TokenSeq, special: SpecialIds) -> f64 {
    if is_well_formed(generated, special) {
        1.0
    } else {
        0.0
    }
}

pub fn is_well_formed(generated: &TokenSeq, special: SpecialIds) -> bool {
    let ids = generated.ids();
    let n = ids.len();
    if n < 2 || ids[n - 1] != special.emb || ids[n - 2] != special.think_close {
        return false;
    }
    !ids[..n - 2].iter().any(|&t| special.contains(t))
}

/// Tokens before the first `</think>`, or every token when there is none.
pub fn cot_length(generated: &TokenSeq, special: SpecialIds) -> usize {
    generated
        .ids()
        .iter()
        .position(|&t| t == special.think_close)
        .unwrap_or(generated.len())
}

pub fn length_reward(generated: &TokenSeq, threshold: usize, special: SpecialIds) -> f64 {
    if cot_length(generated, special) <= threshold {
        1.0
    } else {
        0.0
    }
}

/// `1 + #{j ≠ gt : sims[j] > sims[gt]}`. Ties never push the ground truth down.
pub fn rank_of(sims: &[f64], gt_index: usize) -> Result<usize> {
    let gt = *sims
        .get(gt_index)
        .ok_or_else(|| LremError::InvalidArgument(format!("gt index {gt_index} out of {}", sims.len())))?;
    Ok(1 + sims
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != gt_index && s > gt)
        .count())
}

/// `1 - ln(rank) / ln(N)`.
pub fn accuracy_reward(rank: usize, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(LremError::InvalidArgument(format!("accuracy reward needs N >= 2, got {n}")));
    }
    if rank == 0 || rank > n {
        return Err(LremError::InvalidArgument(format!("rank {rank} outside 1..={n}")));
    }
    Ok(1.0 - (rank as f64).ln() / (n as f64).ln())
}

pub fn total_reward(format: f64, length: f64, accuracy: f64, cfg: &RewardConfig) -> RewardBreakdown {
    RewardBreakdown {
        format,
        length,
        accuracy,
        total: cfg.beta_format * format + cfg.beta_length * length + cfg.beta_accuracy * accuracy,
    }
}

/// Full breakdown for one rollout. `rank` is `None` for malformed rollouts,
/// which have no embedding and score zero accuracy.
pub fn score_rollout(
    generated: &TokenSeq,
    rank: Option<usize>,
    n_items: usize,
    cfg: &RewardConfig,
    special: SpecialIds,
) -> Result<RewardBreakdown> {
    let format = format_reward(generated, special);
    let length = length_reward(generated, cfg.length_threshold, special);
    let accuracy = match (format > 0.0, rank) {
        (true, Some(r)) => accuracy_reward(r, n_items)?,
        _ => 0.0,
    };
    Ok(total_reward(format, length, accuracy, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SP: SpecialIds = SpecialIds::standard();

    fn seq(v: &[u32]) -> TokenSeq {
        TokenSeq(v.to_vec())
    }

    #[test]
    fn format_examples() {
        assert_eq!(format_reward(&seq(&[7, 8, 3, 4]), SP), 1.0);
        assert_eq!(format_reward(&seq(&[7, 8]), SP), 0.0);
        assert_eq!(format_reward(&seq(&[7, 2, 8, 3, 4]), SP), 0.0);
        assert_eq!(format_reward(&seq(&[3, 4]), SP), 1.0);
        assert_eq!(format_reward(&seq(&[7, 3, 3, 4]), SP), 0.0);
        assert_eq!(format_reward(&seq(&[7, 0, 3, 4]), SP), 0.0);
        assert_eq!(format_reward(&seq(&[7, 4]), SP), 0.0);
    }

    #[test]
    fn length_examples() {
        let mut sixteen = vec![9; 16];
        sixteen.extend([3, 4]);
        assert_eq!(length_reward(&seq(&sixteen), 16, SP), 1.0);
        let mut seventeen = vec![9; 17];
        seventeen.extend([3, 4]);
        assert_eq!(length_reward(&seq(&seventeen), 16, SP), 0.0);
        assert_eq!(length_reward(&seq(&[3, 4]), 16, SP), 1.0);
        // no terminator: every token counts
        assert_eq!(length_reward(&seq(&[9; 17]), 16, SP), 0.0);
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of(&[0.9, 0.1, 0.2], 0).unwrap(), 1);
        assert_eq!(rank_of(&[0.5; 6], 3).unwrap(), 1);
        assert_eq!(rank_of(&[0.90, 0.95, 0.80, 0.99], 0).unwrap(), 3);
        assert!(rank_of(&[0.1], 1).is_err());
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy_reward(1, 256).unwrap(), 1.0);
        assert_eq!(accuracy_reward(256, 256).unwrap(), 0.0);
        assert!((accuracy_reward(16, 256).unwrap() - 0.5).abs() <= 1e-12);
        assert!(accuracy_reward(1, 1).is_err());
        assert!(accuracy_reward(0, 4).is_err());
    }

    #[test]
    fn total_examples() {
        let c = RewardConfig::default();
        assert!((total_reward(1.0, 1.0, 1.0, &c).total - 1.7).abs() <= 1e-12);
        assert!((total_reward(1.0, 1.0, 0.5, &c).total - 1.2).abs() <= 1e-12);
        assert_eq!(total_reward(0.0, 0.0, 0.0, &c).total, 0.0);
    }

    #[test]
    fn malformed_rollout_scores_no_accuracy() {
        let c = RewardConfig::default();
        let b = score_rollout(&seq(&[9, 9]), Some(1), 8, &c, SP).unwrap();
        assert_eq!((b.format, b.length, b.accuracy), (0.0, 1.0, 0.0));
        assert!((b.total - 0.2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn accuracy_strictly_decreasing(n in 2usize..500, r in 1usize..499) {
            prop_assume!(r < n);
            prop_assert!(accuracy_reward(r, n).unwrap() > accuracy_reward(r + 1, n).unwrap());
        }

        #[test]
        fn rank_invariant_under_monotone_map(sims in proptest::collection::vec(-1.0f64..1.0, 1..20), gt in 0usize..20) {
            prop_assume!(gt < sims.len());
            let mapped: Vec<f64> = sims.iter().map(|s| (3.0 * s).exp() + 2.0).collect();
            prop_assert_eq!(rank_of(&sims, gt).unwrap(), rank_of(&mapped, gt).unwrap());
        }

        #[test]
        fn total_monotone_and_bounded(f in 0u8..2, l in 0u8..2, a in 0.0f64..=1.0, da in 0.0f64..0.5) {
            let c = RewardConfig::default();
            let base = total_reward(f as f64, l as f64, a, &c).total;
            prop_assert!(base >= 0.0 && base <= c.max_total() + 1e-12);
            prop_assert!(total_reward(f as f64, l as f64, (a + da).min(1.0), &c).total >= base);
            prop_assert!(total_reward(1.0, l as f64, a, &c).total >= base);
            prop_assert!(total_reward(f as f64, 1.0, a, &c).total >= base);
        }
    }
}
