//! Softmax policies over a toy vocabulary and the sampling helpers around them.
//!
//! The decision state is `(condition, position, previous token)`, with the
//! previous token index `V` standing for start-of-sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::ToyEnv;
use super::SilError;
use crate::embeddings::EmbeddingTable;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// One free logit per (state, token).
    Tabular,
    /// Logits linear in one-hot features of previous token, position and condition.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    kind: PolicyKind,
    vocab_size: usize,
    horizon: usize,
    num_conditions: usize,
    temperature: f64,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub condition: Option<usize>,
    pub tokens: Vec<usize>,
    /// Log-probability of each token under the sampling policy.
    pub step_log_probs: Vec<f64>,
    pub reward: f64,
}

impl Trajectory {
    pub fn log_prob(&self) -> f64 {
        self.step_log_probs.iter().sum()
    }
}

impl Policy {
    /// Uniform policy (all parameters zero).
    pub fn new(kind: PolicyKind, vocab_size: usize, horizon: usize, num_conditions: usize) -> Self {
        let mut p = Self { kind, vocab_size, horizon, num_conditions: num_conditions.max(1), temperature: 1.0, params: Vec::new() };
        p.params = vec![0.0; p.num_params()];
        p
    }

    pub fn for_env(kind: PolicyKind, env: &ToyEnv) -> Self {
        Self::new(kind, env.vocab_size(), env.horizon(), env.num_conditions())
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, SilError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(SilError::Config(format!("temperature must be positive, got {temperature}")));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn num_features(&self) -> usize {
        (self.vocab_size + 1) + self.horizon + self.num_conditions + 1
    }

    pub fn num_params(&self) -> usize {
        match self.kind {
            PolicyKind::Tabular => self.num_conditions * self.horizon * (self.vocab_size + 1) * self.vocab_size,
            PolicyKind::Linear => self.vocab_size * self.num_features(),
        }
    }

    fn table_row(&self, c: usize, t: usize, prev: usize) -> usize {
        ((c * self.horizon + t) * (self.vocab_size + 1) + prev) * self.vocab_size
    }

    fn features(&self, c: usize, t: usize, prev: usize) -> [usize; 4] {
        let v1 = self.vocab_size + 1;
        [prev, v1 + t, v1 + self.horizon + c, self.num_features() - 1]
    }

    fn state(&self, condition: Option<usize>, t: usize, prev: usize) -> (usize, usize, usize) {
        (condition.unwrap_or(0).min(self.num_conditions - 1), t.min(self.horizon - 1), prev.min(self.vocab_size))
    }

    /// Temperature-scaled logits at a decision state.
    pub fn logits(&self, condition: Option<usize>, t: usize, prev: usize) -> Vec<f64> {
        let (c, t, prev) = self.state(condition, t, prev);
        let v = self.vocab_size;
        let raw: Vec<f64> = match self.kind {
            PolicyKind::Tabular => {
                let row = self.table_row(c, t, prev);
                self.params[row..row + v].to_vec()
            }
            PolicyKind::Linear => {
                let f = self.num_features();
                let feats = self.features(c, t, prev);
                (0..v).map(|y| feats.iter().map(|&k| self.params[y * f + k]).sum()).collect()
            }
        };
        raw.into_iter().map(|l| l / self.temperature).collect()
    }

    pub fn probs(&self, condition: Option<usize>, t: usize, prev: usize) -> Vec<f64> {
        softmax(&self.logits(condition, t, prev))
    }

    pub fn step_log_probs(&self, condition: Option<usize>, tokens: &[usize]) -> Vec<f64> {
        let mut prev = self.vocab_size;
        tokens
            .iter()
            .enumerate()
            .map(|(t, &y)| {
                let lp = log_softmax(&self.logits(condition, t, prev))[y];
                prev = y;
                lp
            })
            .collect()
    }

    pub fn log_prob(&self, condition: Option<usize>, tokens: &[usize]) -> f64 {
        self.step_log_probs(condition, tokens).iter().sum()
    }

    /// Adds `scale * grad log pi(tokens | condition)` into `out`.
    pub fn accumulate_grad_log_prob(&self, condition: Option<usize>, tokens: &[usize], scale: f64, out: &mut [f64]) {
        if scale == 0.0 {
            return;
        }
        let v = self.vocab_size;
        let mut prev = v;
        for (t, &y) in tokens.iter().enumerate() {
            let p = self.probs(condition, t, prev);
            let (c, ts, ps) = self.state(condition, t, prev);
            match self.kind {
                PolicyKind::Tabular => {
                    let row = self.table_row(c, ts, ps);
                    for (k, pk) in p.iter().enumerate() {
                        let d = (f64::from(u8::from(k == y)) - pk) / self.temperature;
                        out[row + k] += scale * d;
                    }
                }
                PolicyKind::Linear => {
                    let f = self.num_features();
                    let feats = self.features(c, ts, ps);
                    for (k, pk) in p.iter().enumerate() {
                        let d = scale * (f64::from(u8::from(k == y)) - pk) / self.temperature;
                        for &feat in &feats {
                            out[k * f + feat] += d;
                        }
                    }
                }
            }
            prev = y;
        }
    }

    pub fn grad_log_prob(&self, condition: Option<usize>, tokens: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.accumulate_grad_log_prob(condition, tokens, 1.0, &mut g);
        g
    }

    /// `params += step * direction`.
    pub fn apply(&mut self, direction: &[f64], step: f64) {
        for (p, d) in self.params.iter_mut().zip(direction) {
            *p += step * d;
        }
    }

    /// Samples one sequence, returning its tokens and per-step log-probabilities.
    pub fn sample(&self, condition: Option<usize>, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<f64>) {
        let mut tokens = Vec::with_capacity(self.horizon);
        let mut prev = self.vocab_size;
        let mut step_log_probs = Vec::with_capacity(self.horizon);
        for t in 0..self.horizon {
            let lp = log_softmax(&self.logits(condition, t, prev));
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = self.vocab_size - 1;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    y = k;
                    break;
                }
            }
            step_log_probs.push(lp[y]);
            tokens.push(y);
            prev = y;
        }
        (tokens, step_log_probs)
    }

    /// Argmax decoding; ties go to the lowest token id.
    pub fn greedy(&self, condition: Option<usize>) -> Vec<usize> {
        let mut tokens = Vec::with_capacity(self.horizon);
        let mut prev = self.vocab_size;
        for t in 0..self.horizon {
            let logits = self.logits(condition, t, prev);
            let mut best = 0;
            for (k, l) in logits.iter().enumerate() {
                if *l > logits[best] {
                    best = k;
                }
            }
            tokens.push(best);
            prev = best;
        }
        tokens
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Draws `k` trajectories (conditions included) from a seeded stream.
pub fn sample_trajectories(policy: &Policy, env: &ToyEnv, k: usize, seed: u64) -> Result<Vec<Trajectory>, SilError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(policy, env, k, &mut rng)
}

pub fn sample_with(policy: &Policy, env: &ToyEnv, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Trajectory>, SilError> {
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let condition = env.sample_condition(rng);
        let (tokens, step_log_probs) = policy.sample(condition, rng);
        let reward = env.reward(condition, &tokens)?;
        out.push(Trajectory { condition, tokens, step_log_probs, reward });
    }
    Ok(out)
}

pub fn greedy_decode(policy: &Policy, env: &ToyEnv, condition: Option<usize>) -> Result<Trajectory, SilError> {
    let tokens = policy.greedy(condition);
    let reward = env.reward(condition, &tokens)?;
    let step_log_probs = policy.step_log_probs(condition, &tokens);
    Ok(Trajectory { condition, tokens, step_log_probs, reward })
}

/// Probability-weighted mean embedding under `softmax(logits / beta)`.
pub fn soft_argmax<S: Scalar, T: AsRef<str>>(
    logits: &[f64],
    table: &EmbeddingTable<S>,
    vocab: &[T],
    beta: f64,
) -> Result<Vec<S>, SilError> {
    if logits.len() != vocab.len() || logits.is_empty() {
        return Err(SilError::InvalidArgument(format!(
            "{} logits for a vocabulary of {}",
            logits.len(),
            vocab.len()
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SilError::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / beta).collect();
    let weights = softmax(&scaled);
    let embed = table.resolve(vocab)?;
    let mut out = vec![S::zero(); table.dim()];
    for (w, row) in weights.iter().zip(embed.rows()) {
        if *w == 0.0 {
            continue;
        }
        let w = S::of(*w);
        for (o, e) in out.iter_mut().zip(row.iter()) {
            *o = *o + w * *e;
        }
    }
    Ok(out)
}

/// Maximum-likelihood fit on `corpus` sequences for each condition.
///
/// Tabular policies take smoothed count estimates directly; linear policies
/// run `epochs` passes of full-batch gradient ascent.
pub fn pretrain(
    policy: &mut Policy,
    corpus: &[(Option<usize>, Vec<usize>)],
    epochs: usize,
    learning_rate: f64,
) -> Result<(), SilError> {
    if corpus.is_empty() {
        return Err(SilError::InvalidArgument("empty pretraining corpus".into()));
    }
    if let Some((_, bad)) = corpus.iter().find(|(_, s)| s.iter().any(|&y| y >= policy.vocab_size)) {
        return Err(SilError::InvalidArgument(format!("token out of vocabulary in {bad:?}")));
    }
    match policy.kind {
        PolicyKind::Tabular => {
            let v = policy.vocab_size;
            let mut counts = vec![0.0; policy.params.len()];
            for (condition, seq) in corpus {
                let mut prev = v;
                for (t, &y) in seq.iter().enumerate().take(policy.horizon) {
                    let (c, ts, ps) = policy.state(*condition, t, prev);
                    counts[policy.table_row(c, ts, ps) + y] += 1.0;
                    prev = y;
                }
            }
            let tau = policy.temperature;
            for (row, chunk) in counts.chunks(v).enumerate() {
                let total: f64 = chunk.iter().sum();
                for (k, n) in chunk.iter().enumerate() {
                    // add-one smoothing keeps unseen continuations reachable
                    policy.params[row * v + k] = tau * ((n + 1.0) / (total + v as f64)).ln();
                }
            }
        }
        PolicyKind::Linear => {
            let scale = 1.0 / corpus.len() as f64;
            for _ in 0..epochs {
                let mut grad = vec![0.0; policy.params.len()];
                for (condition, seq) in corpus {
                    policy.accumulate_grad_log_prob(*condition, seq, scale, &mut grad);
                }
                policy.apply(&grad, learning_rate);
            }
        }
    }
    Ok(())
}
