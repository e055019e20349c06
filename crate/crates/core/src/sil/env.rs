//! Desk-scale sequence generation environments.
//!
//! Every environment carries a first-order Markov "oracle" chain over a
//! `V`-token vocabulary. The chain either defines the reward directly (mean
//! per-token oracle log-probability) or generates the reference sequences
//! that Wasserstein rewards are measured against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::Policy;
use super::SilError;
use crate::embeddings::{EmbeddingTable, OovPolicy};
use crate::ot::IpotConfig;
use crate::seq_match::wasserstein_reward;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// Mean per-token log-probability under the oracle chain.
    OracleLogProb,
    /// Best Wasserstein reward against a fixed reference set.
    TargetOverlap,
    /// Like `TargetOverlap`, with one reference set per condition id.
    Conditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub vocab_size: usize,
    pub horizon: usize,
    pub reward: RewardKind,
    /// Only read for [`RewardKind::Conditional`].
    pub num_conditions: usize,
    /// Reference sequences per condition.
    pub reference_count: usize,
    /// Size of the sampled pretraining corpus for the oracle reward.
    pub corpus_size: usize,
    /// Oracle logits are drawn uniformly from `[-sharpness, sharpness]`.
    pub oracle_sharpness: f64,
    pub seed: u64,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self {
            vocab_size: 8,
            horizon: 8,
            reward: RewardKind::OracleLogProb,
            num_conditions: 1,
            reference_count: 8,
            corpus_size: 200,
            oracle_sharpness: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyEnv {
    spec: EnvSpec,
    names: Vec<String>,
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    references: Vec<Vec<Vec<usize>>>,
    corpus: Vec<Vec<usize>>,
    table: EmbeddingTable<f64>,
    ipot: IpotConfig<f64>,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn draw(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl ToyEnv {
    pub fn new(spec: &EnvSpec) -> Result<Self, SilError> {
        if spec.vocab_size < 2 {
            return Err(SilError::Config(format!("vocab_size must be >= 2, got {}", spec.vocab_size)));
        }
        if spec.horizon < 1 {
            return Err(SilError::Config("horizon must be >= 1".into()));
        }
        let conditions = match spec.reward {
            RewardKind::Conditional if spec.num_conditions == 0 => {
                return Err(SilError::Config("num_conditions must be >= 1".into()))
            }
            RewardKind::Conditional => spec.num_conditions,
            _ => 1,
        };
        if spec.reference_count == 0 {
            return Err(SilError::Config("reference_count must be >= 1".into()));
        }
        if !(spec.oracle_sharpness >= 0.0 && spec.oracle_sharpness.is_finite()) {
            return Err(SilError::Config("oracle_sharpness must be finite and >= 0".into()));
        }
        let v = spec.vocab_size;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let logits = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..v).map(|_| spec.oracle_sharpness * rng.random_range(-1.0..=1.0)).collect()
        };
        let initial = softmax(&logits(&mut rng));
        let transitions: Vec<Vec<f64>> = (0..v).map(|_| softmax(&logits(&mut rng))).collect();

        let names: Vec<String> = (0..v).map(|i| format!("t{i}")).collect();
        // A token is described by where the chain goes from it and how it is reached.
        let entries = (0..v).map(|i| {
            let mut e = transitions[i].clone();
            e.extend(transitions.iter().map(|row| row[i]));
            (names[i].clone(), e)
        });
        let table = EmbeddingTable::from_entries(2 * v, entries, OovPolicy::Strict)?;

        let mut env = Self {
            spec: EnvSpec { num_conditions: conditions, ..spec.clone() },
            names,
            initial,
            transitions,
            references: Vec::new(),
            corpus: Vec::new(),
            table,
            ipot: IpotConfig::default(),
        };
        env.references = (0..conditions)
            .map(|_| (0..spec.reference_count).map(|_| env.sample_chain(&mut rng)).collect())
            .collect();
        env.corpus = (0..spec.corpus_size).map(|_| env.sample_chain(&mut rng)).collect();
        Ok(env)
    }

    /// Replaces the generated embeddings; every vocabulary name must resolve.
    pub fn with_table(mut self, table: EmbeddingTable<f64>) -> Result<Self, SilError> {
        table.resolve(&self.names)?;
        self.table = table;
        Ok(self)
    }

    pub fn with_ipot(mut self, ipot: IpotConfig<f64>) -> Self {
        self.ipot = ipot;
        self
    }

    fn sample_chain(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.spec.horizon);
        let mut probs = &self.initial;
        for _ in 0..self.spec.horizon {
            let y = draw(rng, probs);
            out.push(y);
            probs = &self.transitions[y];
        }
        out
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    pub fn reward_kind(&self) -> RewardKind {
        self.spec.reward
    }

    pub fn num_conditions(&self) -> usize {
        self.spec.num_conditions
    }

    pub fn is_conditional(&self) -> bool {
        self.spec.reward == RewardKind::Conditional
    }

    pub fn table(&self) -> &EmbeddingTable<f64> {
        &self.table
    }

    pub fn ipot(&self) -> &IpotConfig<f64> {
        &self.ipot
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transitions(&self) -> &[Vec<f64>] {
        &self.transitions
    }

    /// Embedding-table names of `tokens`.
    pub fn token_names(&self, tokens: &[usize]) -> Vec<&str> {
        tokens.iter().map(|t| self.names[*t].as_str()).collect()
    }

    /// Draws a condition id (always `None` for unconditional envs).
    pub fn sample_condition(&self, rng: &mut ChaCha8Rng) -> Option<usize> {
        self.is_conditional().then(|| rng.random_range(0..self.spec.num_conditions))
    }

    pub fn conditions(&self) -> Vec<Option<usize>> {
        if self.is_conditional() {
            (0..self.spec.num_conditions).map(Some).collect()
        } else {
            vec![None]
        }
    }

    pub fn references(&self, condition: Option<usize>) -> &[Vec<usize>] {
        &self.references[condition.unwrap_or(0).min(self.references.len() - 1)]
    }

    /// Ground-truth sequences used for pretraining on `condition`.
    pub fn corpus(&self, condition: Option<usize>) -> &[Vec<usize>] {
        match self.spec.reward {
            RewardKind::OracleLogProb => &self.corpus,
            _ => self.references(condition),
        }
    }

    pub fn oracle_log_prob(&self, tokens: &[usize]) -> f64 {
        let mut probs = &self.initial;
        let mut total = 0.0;
        for &y in tokens {
            total += probs[y].ln();
            probs = &self.transitions[y];
        }
        total
    }

    pub fn reward(&self, condition: Option<usize>, tokens: &[usize]) -> Result<f64, SilError> {
        match self.spec.reward {
            RewardKind::OracleLogProb => Ok(self.oracle_log_prob(tokens) / tokens.len().max(1) as f64),
            RewardKind::TargetOverlap | RewardKind::Conditional => {
                let hyp = self.token_names(tokens);
                let mut best = f64::NEG_INFINITY;
                for reference in self.references(condition) {
                    let r = wasserstein_reward(&self.table, &hyp, &self.token_names(reference), &self.ipot)?;
                    best = best.max(r);
                }
                Ok(best)
            }
        }
    }

    /// Exact expected reward by forward propagation of the token marginals,
    /// available for the oracle reward (it is additive over transitions).
    pub fn expected_reward(&self, policy: &Policy) -> Option<f64> {
        if self.spec.reward != RewardKind::OracleLogProb {
            return None;
        }
        let v = self.spec.vocab_size;
        let conditions = self.conditions();
        let mut total = 0.0;
        for &condition in &conditions {
            // prev index v is the start-of-sequence state
            let mut marginal = vec![0.0; v + 1];
            marginal[v] = 1.0;
            let mut expected = 0.0;
            for t in 0..self.spec.horizon {
                let mut next = vec![0.0; v + 1];
                for (prev, &mass) in marginal.iter().enumerate() {
                    if mass == 0.0 {
                        continue;
                    }
                    let pi = policy.probs(condition, t, prev);
                    let oracle = if prev == v { &self.initial } else { &self.transitions[prev] };
                    for y in 0..v {
                        expected += mass * pi[y] * oracle[y].ln();
                        next[y] += mass * pi[y];
                    }
                }
                marginal = next;
            }
            total += expected / self.spec.horizon as f64;
        }
        Some(total / conditions.len() as f64)
    }

    /// Exact expected reward when available, else a seeded Monte-Carlo mean.
    pub fn evaluate(&self, policy: &Policy, samples: usize, seed: u64) -> Result<f64, SilError> {
        if let Some(exact) = self.expected_reward(policy) {
            return Ok(exact);
        }
        let trajs = super::policy::sample_trajectories(policy, self, samples.max(1), seed)?;
        Ok(trajs.iter().map(|t| t.reward).sum::<f64>() / trajs.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_rows_are_distributions() {
        let env = ToyEnv::new(&EnvSpec::default()).unwrap();
        assert!((env.initial().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for row in env.transitions() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(env.corpus(None).len(), 200);
        assert!(env.corpus(None).iter().all(|s| s.len() == 8));
    }

    #[test]
    fn same_seed_same_env() {
        let a = ToyEnv::new(&EnvSpec::default()).unwrap();
        let b = ToyEnv::new(&EnvSpec::default()).unwrap();
        assert_eq!(a.transitions(), b.transitions());
        assert_eq!(a.references(None), b.references(None));
        let c = ToyEnv::new(&EnvSpec { seed: 1, ..EnvSpec::default() }).unwrap();
        assert_ne!(a.transitions(), c.transitions());
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(ToyEnv::new(&EnvSpec { vocab_size: 1, ..EnvSpec::default() }).is_err());
        assert!(ToyEnv::new(&EnvSpec { horizon: 0, ..EnvSpec::default() }).is_err());
        let spec = EnvSpec { reward: RewardKind::Conditional, num_conditions: 0, ..EnvSpec::default() };
        assert!(ToyEnv::new(&spec).is_err());
    }

    #[test]
    fn oracle_reward_is_mean_log_prob() {
        let env = ToyEnv::new(&EnvSpec { vocab_size: 3, horizon: 2, ..EnvSpec::default() }).unwrap();
        let expect = (env.initial()[1].ln() + env.transitions()[1][2].ln()) / 2.0;
        assert!((env.reward(None, &[1, 2]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn overlap_reward_hits_one_on_references() {
        let spec = EnvSpec { reward: RewardKind::Conditional, num_conditions: 3, horizon: 4, ..EnvSpec::default() };
        let env = ToyEnv::new(&spec).unwrap();
        assert_eq!(env.conditions().len(), 3);
        let target = env.references(Some(2))[0].clone();
        let r = env.reward(Some(2), &target).unwrap();
        assert!((r - 1.0).abs() < 1e-3);
    }
}
