//! Per-condition replay buffer of high-scoring trajectories.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::ToyEnv;
use super::policy::Trajectory;
use super::SilError;
use crate::metrics::{f1_bleu, sentence_bleu};
use crate::nested::nested_wasserstein;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferCriterion {
    /// The environment reward itself.
    Reward,
    /// F1 of bigram BLEU against the references and against the buffer.
    F1Bleu,
    /// Nested reward of the sequence alone against the reference set.
    NestedReward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub condition: Option<usize>,
    pub tokens: Vec<usize>,
    /// Environment reward, compared against fresh samples by the SIL gate.
    pub reward: f64,
    /// Score the buffer ranks by.
    pub priority: f64,
    pub insert_step: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    dedupe: bool,
    buckets: BTreeMap<Option<usize>, Vec<BufferEntry>>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, dedupe: bool) -> Result<Self, SilError> {
        if capacity == 0 {
            return Err(SilError::Config("buffer capacity must be >= 1".into()));
        }
        Ok(Self { capacity, dedupe, buckets: BTreeMap::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self, condition: Option<usize>) -> usize {
        self.buckets.get(&condition).map_or(0, Vec::len)
    }

    pub fn total_len(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_len() == 0
    }

    /// Entries for `condition`, highest priority first.
    pub fn entries(&self, condition: Option<usize>) -> &[BufferEntry] {
        self.buckets.get(&condition).map_or(&[], Vec::as_slice)
    }

    pub fn all_entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.buckets.values().flatten()
    }

    pub fn min_priority(&self, condition: Option<usize>) -> Option<f64> {
        self.entries(condition).last().map(|e| e.priority)
    }

    pub fn max_priority(&self, condition: Option<usize>) -> Option<f64> {
        self.entries(condition).first().map(|e| e.priority)
    }

    /// Inserts `entry` if there is room or it beats the current minimum.
    /// Returns whether the buffer changed.
    pub fn insert(&mut self, entry: BufferEntry) -> bool {
        if !entry.priority.is_finite() {
            return false;
        }
        let capacity = self.capacity;
        let dedupe = self.dedupe;
        let bucket = self.buckets.entry(entry.condition).or_default();
        if dedupe {
            if let Some(pos) = bucket.iter().position(|e| e.tokens == entry.tokens) {
                if bucket[pos].priority >= entry.priority {
                    return false;
                }
                bucket.remove(pos);
            }
        }
        if bucket.len() >= capacity {
            match bucket.last() {
                Some(worst) if entry.priority > worst.priority => {
                    bucket.pop();
                }
                _ => return false,
            }
        }
        // After existing entries of equal priority, so the oldest of a tie is kept.
        let pos = bucket.partition_point(|e| e.priority >= entry.priority);
        bucket.insert(pos, entry);
        true
    }

    /// Draws up to `k` distinct entries of `condition` without replacement,
    /// returned in buffer order.
    pub fn sample(&self, condition: Option<usize>, k: usize, rng: &mut ChaCha8Rng) -> Vec<BufferEntry> {
        let entries = self.entries(condition);
        if k >= entries.len() {
            return entries.to_vec();
        }
        let mut picked = sample(rng, entries.len(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| entries[i].clone()).collect()
    }
}

/// Scores each trajectory by `criterion` and offers it to the buffer.
/// Returns how many insertions changed the buffer.
pub fn buffer_update(
    buffer: &mut ReplayBuffer,
    trajectories: &[Trajectory],
    criterion: BufferCriterion,
    env: &ToyEnv,
    step: u64,
) -> Result<usize, SilError> {
    let mut accepted = 0;
    for (idx, traj) in trajectories.iter().enumerate() {
        let priority = match criterion {
            BufferCriterion::Reward => traj.reward,
            BufferCriterion::NestedReward => {
                let refs: Vec<Vec<&str>> = env.references(traj.condition).iter().map(|r| env.token_names(r)).collect();
                let result = nested_wasserstein(env.table(), &[env.token_names(&traj.tokens)], &refs, env.ipot())?;
                result.per_hyp_reward[0]
            }
            BufferCriterion::F1Bleu => {
                let hyp = env.token_names(&traj.tokens);
                let refs: Vec<Vec<&str>> = env.references(traj.condition).iter().map(|r| env.token_names(r)).collect();
                let test = sentence_bleu(&hyp, &refs, 2)?;
                let peers: Vec<Vec<&str>> = buffer
                    .entries(traj.condition)
                    .iter()
                    .map(|e| env.token_names(&e.tokens))
                    .chain(
                        trajectories
                            .iter()
                            .enumerate()
                            .filter(|(j, t)| *j != idx && t.condition == traj.condition)
                            .map(|(_, t)| env.token_names(&t.tokens)),
                    )
                    .collect();
                let own = if peers.is_empty() { 0.0 } else { sentence_bleu(&hyp, &peers, 2)? };
                f1_bleu(test, own)
            }
        };
        let entry = BufferEntry {
            condition: traj.condition,
            tokens: traj.tokens.clone(),
            reward: traj.reward,
            priority,
            insert_step: step,
        };
        if buffer.insert(entry) {
            accepted += 1;
        }
    }
    Ok(accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn entry(tokens: Vec<usize>, priority: f64, at: u64) -> BufferEntry {
        BufferEntry { condition: None, tokens, reward: priority, priority, insert_step: at }
    }

    #[test]
    fn keeps_the_best_up_to_capacity() {
        let mut b = ReplayBuffer::new(2, true).unwrap();
        assert!(b.insert(entry(vec![0], 0.1, 0)));
        assert!(b.insert(entry(vec![1], 0.5, 0)));
        assert!(!b.insert(entry(vec![2], 0.05, 1)));
        assert!(b.insert(entry(vec![3], 0.3, 1)));
        let kept: Vec<_> = b.entries(None).iter().map(|e| e.tokens[0]).collect();
        assert_eq!(kept, vec![1, 3]);
        assert_eq!(b.min_priority(None), Some(0.3));
        assert_eq!(b.max_priority(None), Some(0.5));
    }

    #[test]
    fn dedupe_keeps_the_better_copy() {
        let mut b = ReplayBuffer::new(4, true).unwrap();
        b.insert(entry(vec![1, 2], 0.2, 0));
        assert!(!b.insert(entry(vec![1, 2], 0.1, 1)));
        assert!(b.insert(entry(vec![1, 2], 0.4, 2)));
        assert_eq!(b.len(None), 1);
        assert_eq!(b.entries(None)[0].priority, 0.4);

        let mut loose = ReplayBuffer::new(4, false).unwrap();
        loose.insert(entry(vec![1, 2], 0.2, 0));
        loose.insert(entry(vec![1, 2], 0.2, 1));
        assert_eq!(loose.len(None), 2);
    }

    #[test]
    fn conditions_are_separate() {
        let mut b = ReplayBuffer::new(1, true).unwrap();
        b.insert(BufferEntry { condition: Some(0), ..entry(vec![0], 0.9, 0) });
        b.insert(BufferEntry { condition: Some(1), ..entry(vec![0], 0.1, 0) });
        assert_eq!(b.len(Some(0)), 1);
        assert_eq!(b.len(Some(1)), 1);
        assert_eq!(b.total_len(), 2);
        assert!(ReplayBuffer::new(0, true).is_err());
    }

    #[test]
    fn sample_is_seeded_and_distinct() {
        let mut b = ReplayBuffer::new(10, true).unwrap();
        for i in 0..10 {
            b.insert(entry(vec![i], i as f64, 0));
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = b.sample(None, 4, &mut r1);
        assert_eq!(a, b.sample(None, 4, &mut r2));
        assert_eq!(a.len(), 4);
        let mut toks: Vec<_> = a.iter().map(|e| e.tokens[0]).collect();
        toks.dedup();
        assert_eq!(toks.len(), 4);
        assert_eq!(b.sample(None, 20, &mut r1).len(), 10);
    }

    proptest! {
        #[test]
        fn min_priority_never_drops_once_full(
            prios in proptest::collection::vec(-1.0f64..1.0, 1..60),
            cap in 1usize..8,
        ) {
            let mut b = ReplayBuffer::new(cap, false).unwrap();
            let mut last_min: Option<f64> = None;
            for (i, p) in prios.iter().enumerate() {
                b.insert(entry(vec![i], *p, i as u64));
                prop_assert!(b.len(None) <= cap);
                if b.len(None) == cap {
                    let m = b.min_priority(None).unwrap();
                    if let Some(prev) = last_min {
                        prop_assert!(m >= prev);
                    }
                    last_min = Some(m);
                }
            }
            let mut sorted = prios.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let kept: Vec<f64> = b.entries(None).iter().map(|e| e.priority).collect();
            prop_assert_eq!(kept, sorted[..cap.min(sorted.len())].to_vec());
        }
    }
}
