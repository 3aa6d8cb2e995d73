//! Context-chain masking: which premises are hidden together, and the
//! combined label of the group.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::EventSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContextMaskSchedule {
    /// Probability of masking more than one premise.
    pub multi_mask_prob: f64,
    /// Inclusive bounds on the group size of a multi-mask.
    pub min_count: usize,
    pub max_count: usize,
    pub seed: u64,
}

impl Default for ContextMaskSchedule {
    fn default() -> Self {
        Self { multi_mask_prob: 0.3, min_count: 2, max_count: 2, seed: 0 }
    }
}

impl ContextMaskSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.multi_mask_prob) {
            return Err(Error::Config(format!("multi_mask_prob must lie in [0, 1], got {}", self.multi_mask_prob)));
        }
        if self.min_count < 2 || self.max_count < self.min_count {
            return Err(Error::Config(format!("mask count range [{}, {}] must start at 2 or more", self.min_count, self.max_count)));
        }
        Ok(())
    }
}

/// Masked premises (0-based, sorted). `anchor` is the premise whose
/// relation is being tested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    pub indices: Vec<usize>,
    pub anchor: usize,
}

impl MaskSpec {
    pub fn single(k: usize) -> Self {
        Self { indices: vec![k], anchor: k }
    }

    pub fn group(anchor: usize, mut indices: Vec<usize>) -> Self {
        if !indices.contains(&anchor) {
            indices.push(anchor);
        }
        indices.sort_unstable();
        indices.dedup();
        Self { indices, anchor }
    }
}

/// OR of the labels at `indices`.
pub fn combined_label(labels: &[bool], indices: &[usize]) -> bool {
    indices.iter().any(|&i| labels[i])
}

/// Draws a mask around `anchor` among the first `labels.len()` premises.
pub fn sample_mask_at(labels: &[bool], anchor: usize, schedule: &ContextMaskSchedule, rng: &mut impl Rng) -> (MaskSpec, bool) {
    let n = labels.len();
    assert!(anchor < n, "anchor outside the premises");
    let largest = schedule.max_count.min(n.saturating_sub(1));
    let spec = if largest >= schedule.min_count && rng.random_bool(schedule.multi_mask_prob) {
        let count = rng.random_range(schedule.min_count..=largest);
        let others: Vec<usize> = (0..n).filter(|&i| i != anchor).collect();
        let extra = sample(rng, others.len(), count - 1).into_iter().map(|i| others[i]).collect();
        MaskSpec::group(anchor, extra)
    } else {
        MaskSpec::single(anchor)
    };
    let label = combined_label(labels, &spec.indices);
    (spec, label)
}

/// Draws a mask for the chain of `seq` with a uniformly chosen anchor.
pub fn sample_mask(seq: &EventSequence, schedule: &ContextMaskSchedule, rng: &mut impl Rng) -> (MaskSpec, bool) {
    let anchor = rng.random_range(0..seq.chain_labels.len());
    sample_mask_at(&seq.chain_labels, anchor, schedule, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn or_rule_examples() {
        assert!(combined_label(&[false, true], &[0, 1]));
        assert!(!combined_label(&[false, false], &[0, 1]));
        assert!(combined_label(&[true, false, false], &[0]));
    }

    #[test]
    fn groups_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let schedule = ContextMaskSchedule { multi_mask_prob: 1.0, min_count: 2, max_count: 4, seed: 0 };
        let labels = vec![false; 6];
        for _ in 0..200 {
            let (spec, _) = sample_mask_at(&labels, 2, &schedule, &mut rng);
            assert!((2..=4).contains(&spec.indices.len()));
            assert!(spec.indices.contains(&2));
        }
        let (spec, _) = sample_mask_at(&[true], 0, &schedule, &mut rng);
        assert_eq!(spec, MaskSpec::single(0));
    }
}
