//! Nested-Wasserstein distance between two sets of sequences.
//!
//! The inner level solves one sequence transport problem per pair `(i, j)`;
//! the outer level transports uniform mass between the two sets with the
//! inner distances as ground cost. The outer plan also weights the pairwise
//! Wasserstein rewards into one nested reward per hypothesis.

use std::collections::HashMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::embeddings::EmbeddingTable;
use crate::ot::{ipot_solve, IpotConfig, OtError, TransportPlan};
use crate::scalar::Scalar;
use crate::seq_match::{seq_match, MatchError};

#[derive(Debug, thiserror::Error)]
pub enum NestedError {
    #[error("{side} sequence set is empty")]
    EmptySet { side: &'static str },
    #[error("pair ({i}, {j}): {source}")]
    Inner {
        i: usize,
        j: usize,
        #[source]
        source: MatchError,
    },
    #[error("outer transport: {0}")]
    Outer(#[from] OtError),
    #[error("hypothesis index {index} out of range for {len} sequences")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct NestedResult<S> {
    /// `K x K'` inner Wasserstein distances.
    pub seq_cost_matrix: Array2<S>,
    /// `K x K'` inner Wasserstein rewards, from the same inner plans.
    pub seq_reward_matrix: Array2<S>,
    pub outer_plan: TransportPlan<S>,
    pub distance: S,
    /// Raw nested reward per hypothesis; carries the `1/K` row mass.
    pub per_hyp_reward: Vec<S>,
}

impl<S: Scalar> NestedResult<S> {
    pub fn num_hyps(&self) -> usize {
        self.per_hyp_reward.len()
    }

    /// Nested reward rescaled by `K` so it no longer shrinks with the set size.
    pub fn normalized_reward(&self, i: usize) -> Result<S, NestedError> {
        Ok(nested_reward(self, i)? * S::of(self.num_hyps() as f64))
    }
}

pub fn nested_wasserstein<S, T>(
    table: &EmbeddingTable<S>,
    set_a: &[Vec<T>],
    set_b: &[Vec<T>],
    config: &IpotConfig<S>,
) -> Result<NestedResult<S>, NestedError>
where
    S: Scalar,
    T: AsRef<str> + Sync,
{
    if set_a.is_empty() {
        return Err(NestedError::EmptySet { side: "first" });
    }
    if set_b.is_empty() {
        return Err(NestedError::EmptySet { side: "second" });
    }
    let (k, k_prime) = (set_a.len(), set_b.len());

    // Identical sequences share one inner solve.
    let (uniq_a, map_a) = unique_sequences(set_a);
    let (uniq_b, map_b) = unique_sequences(set_b);
    let jobs: Vec<(usize, usize)> =
        (0..uniq_a.len()).flat_map(|a| (0..uniq_b.len()).map(move |b| (a, b))).collect();
    let solved: Vec<Result<(S, S), (usize, usize, MatchError)>> = jobs
        .par_iter()
        .map(|&(a, b)| {
            seq_match(table, set_a[uniq_a[a]].as_slice(), set_b[uniq_b[b]].as_slice(), config)
                .map(|m| (m.distance, m.reward))
                .map_err(|e| (uniq_a[a], uniq_b[b], e))
        })
        .collect();
    let mut inner = HashMap::with_capacity(solved.len());
    for (job, result) in jobs.into_iter().zip(solved) {
        let value = result.map_err(|(i, j, source)| NestedError::Inner { i, j, source })?;
        inner.insert(job, value);
    }

    let mut seq_cost_matrix = Array2::zeros((k, k_prime));
    let mut seq_reward_matrix = Array2::zeros((k, k_prime));
    for i in 0..k {
        for j in 0..k_prime {
            let (d, r) = inner[&(map_a[i], map_b[j])];
            seq_cost_matrix[[i, j]] = d;
            seq_reward_matrix[[i, j]] = r;
        }
    }

    let outer_plan = ipot_solve(seq_cost_matrix.view(), config)?;
    let per_hyp_reward = outer_plan
        .values
        .rows()
        .into_iter()
        .zip(seq_reward_matrix.rows())
        .map(|(t, r)| t.iter().zip(r.iter()).fold(S::zero(), |acc, (t, r)| acc + *t * *r))
        .collect();
    Ok(NestedResult { distance: outer_plan.cost, seq_cost_matrix, seq_reward_matrix, outer_plan, per_hyp_reward })
}

/// Raw nested reward of hypothesis `i`.
pub fn nested_reward<S: Scalar>(result: &NestedResult<S>, i: usize) -> Result<S, NestedError> {
    result
        .per_hyp_reward
        .get(i)
        .copied()
        .ok_or(NestedError::IndexOutOfRange { index: i, len: result.per_hyp_reward.len() })
}

fn unique_sequences<T: AsRef<str>>(set: &[Vec<T>]) -> (Vec<usize>, Vec<usize>) {
    let mut first_seen: HashMap<Vec<&str>, usize> = HashMap::new();
    let mut uniq = Vec::new();
    let mut map = Vec::with_capacity(set.len());
    for (idx, seq) in set.iter().enumerate() {
        let key: Vec<&str> = seq.iter().map(AsRef::as_ref).collect();
        let slot = *first_seen.entry(key).or_insert_with(|| {
            uniq.push(idx);
            uniq.len() - 1
        });
        map.push(slot);
    }
    (uniq, map)
}
