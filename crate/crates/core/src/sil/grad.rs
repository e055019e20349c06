//! Policy-gradient estimators: REINFORCE plus the two self-imitation terms.

use serde::{Deserialize, Serialize};

use super::buffer::BufferEntry;
use super::env::ToyEnv;
use super::policy::{Policy, Trajectory};
use super::SilError;
use crate::metrics::naive_semantic_score;
use crate::nested::nested_wasserstein;
use crate::ot::IpotConfig;

/// How sequence pairs are compared inside a self-imitation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// Inner Wasserstein rewards weighted by the outer transport plan.
    Wasserstein,
    /// Mean-embedding cosine with uniform pair weights.
    NaiveCosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SilTermConfig {
    pub lambda: f64,
    /// Rescale nested rewards by the set size.
    pub normalized: bool,
    pub similarity: Similarity,
    pub ipot: IpotConfig<f64>,
}

impl Default for SilTermConfig {
    fn default() -> Self {
        Self { lambda: 0.1, normalized: false, similarity: Similarity::Wasserstein, ipot: IpotConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SilTerm {
    /// Weight on each sequence's score-function gradient.
    pub coefficients: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Pairs that passed the gate (WSIL-I) or rows with positive advantage (WSIL-D).
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WsilGrad {
    pub rl: Vec<f64>,
    pub sil: SilTerm,
    pub total: Vec<f64>,
}

fn weighted_sum(policy: &Policy, items: &[(Option<usize>, &[usize])], coefficients: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; policy.num_params()];
    for ((condition, tokens), c) in items.iter().zip(coefficients) {
        policy.accumulate_grad_log_prob(*condition, tokens, *c, &mut g);
    }
    g
}

/// `(1/K) sum_k (r_k - b) grad log pi(Y_k)`.
pub fn reinforce_grad(policy: &Policy, trajectories: &[Trajectory], baseline: f64) -> Vec<f64> {
    reinforce_grad_with(policy, trajectories, &vec![baseline; trajectories.len()])
}

/// REINFORCE with one baseline per trajectory.
pub fn reinforce_grad_with(policy: &Policy, trajectories: &[Trajectory], baselines: &[f64]) -> Vec<f64> {
    if trajectories.is_empty() {
        return vec![0.0; policy.num_params()];
    }
    let k = trajectories.len() as f64;
    let items: Vec<_> = trajectories.iter().map(|t| (t.condition, t.tokens.as_slice())).collect();
    let coefs: Vec<f64> = trajectories.iter().zip(baselines).map(|(t, b)| (t.reward - b) / k).collect();
    weighted_sum(policy, &items, &coefs)
}

/// Pair similarities and pair weights between two sequence sets.
fn pair_weights(
    env: &ToyEnv,
    rows: &[&[usize]],
    cols: &[&[usize]],
    config: &SilTermConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), SilError> {
    let a: Vec<Vec<&str>> = rows.iter().map(|s| env.token_names(s)).collect();
    let b: Vec<Vec<&str>> = cols.iter().map(|s| env.token_names(s)).collect();
    match config.similarity {
        Similarity::Wasserstein => {
            let result = nested_wasserstein(env.table(), &a, &b, &config.ipot)?;
            let r = result.seq_reward_matrix.rows().into_iter().map(|r| r.to_vec()).collect();
            let t = result.outer_plan.values.rows().into_iter().map(|r| r.to_vec()).collect();
            Ok((r, t))
        }
        Similarity::NaiveCosine => {
            let w = 1.0 / (a.len() * b.len()) as f64;
            let mut r = vec![vec![0.0; b.len()]; a.len()];
            for (i, x) in a.iter().enumerate() {
                for (j, y) in b.iter().enumerate() {
                    r[i][j] = naive_semantic_score(env.table(), x, y)?;
                }
            }
            Ok((r, vec![vec![w; b.len()]; a.len()]))
        }
    }
}

/// Self-imitation term pulling fresh samples toward buffer entries that
/// scored higher than them.
///
/// Sample `k` gets `lambda * sum_j T_kj R_kj [r(buffer_j) > r(Y_k)]`, times `K`
/// when normalized. All sequences are assumed to share one condition.
pub fn wsil_i_term(
    policy: &Policy,
    env: &ToyEnv,
    trajectories: &[Trajectory],
    buffer: &[BufferEntry],
    config: &SilTermConfig,
) -> Result<SilTerm, SilError> {
    let zero = || SilTerm { coefficients: vec![0.0; trajectories.len()], gradient: vec![0.0; policy.num_params()], active: 0 };
    if config.lambda == 0.0 || trajectories.is_empty() || buffer.is_empty() {
        return Ok(zero());
    }
    let mut active = 0;
    let gate: Vec<Vec<bool>> = trajectories
        .iter()
        .map(|t| buffer.iter().map(|b| b.reward > t.reward).collect())
        .collect();
    if !gate.iter().flatten().any(|g| *g) {
        return Ok(zero());
    }
    let rows: Vec<&[usize]> = trajectories.iter().map(|t| t.tokens.as_slice()).collect();
    let cols: Vec<&[usize]> = buffer.iter().map(|b| b.tokens.as_slice()).collect();
    let (r, t) = pair_weights(env, &rows, &cols, config)?;
    let scale = if config.normalized { trajectories.len() as f64 } else { 1.0 };
    let coefficients: Vec<f64> = (0..trajectories.len())
        .map(|k| {
            let mut s = 0.0;
            for j in 0..buffer.len() {
                if gate[k][j] {
                    active += 1;
                    s += t[k][j] * r[k][j];
                }
            }
            config.lambda * scale * s
        })
        .collect();
    let items: Vec<_> = trajectories.iter().map(|t| (t.condition, t.tokens.as_slice())).collect();
    let gradient = weighted_sum(policy, &items, &coefficients);
    Ok(SilTerm { coefficients, gradient, active })
}

/// REINFORCE plus the WSIL-I self-imitation term.
pub fn wsil_i_grad(
    policy: &Policy,
    env: &ToyEnv,
    trajectories: &[Trajectory],
    buffer: &[BufferEntry],
    baseline: f64,
    config: &SilTermConfig,
) -> Result<WsilGrad, SilError> {
    let rl = reinforce_grad(policy, trajectories, baseline);
    let sil = wsil_i_term(policy, env, trajectories, buffer, config)?;
    let total = rl.iter().zip(&sil.gradient).map(|(a, b)| a + b).collect();
    Ok(WsilGrad { rl, sil, total })
}

/// Self-imitation term that replays buffer entries in proportion to how much
/// their nested reward against the references beats the buffer mean.
pub fn wsil_d_term(
    policy: &Policy,
    env: &ToyEnv,
    buffer: &[BufferEntry],
    references: &[Vec<usize>],
    config: &SilTermConfig,
) -> Result<SilTerm, SilError> {
    let zero = || SilTerm { coefficients: vec![0.0; buffer.len()], gradient: vec![0.0; policy.num_params()], active: 0 };
    if config.lambda == 0.0 || buffer.is_empty() || references.is_empty() {
        return Ok(zero());
    }
    let rows: Vec<&[usize]> = buffer.iter().map(|b| b.tokens.as_slice()).collect();
    let cols: Vec<&[usize]> = references.iter().map(Vec::as_slice).collect();
    let (r, t) = pair_weights(env, &rows, &cols, config)?;
    let scale = if config.normalized { buffer.len() as f64 } else { 1.0 };
    let scores: Vec<f64> = (0..buffer.len())
        .map(|j| scale * t[j].iter().zip(&r[j]).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let coefficients = positive_advantages(&scores, config.lambda);
    let active = coefficients.iter().filter(|c| **c > 0.0).count();
    let items: Vec<_> = buffer.iter().map(|b| (b.condition, b.tokens.as_slice())).collect();
    let gradient = weighted_sum(policy, &items, &coefficients);
    Ok(SilTerm { coefficients, gradient, active })
}

/// `lambda * (s_j - mean(s))_+` for each score.
pub fn positive_advantages(scores: &[f64], lambda: f64) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    scores.iter().map(|s| lambda * (s - mean).max(0.0)).collect()
}

/// REINFORCE plus the WSIL-D self-imitation term.
pub fn wsil_d_grad(
    policy: &Policy,
    env: &ToyEnv,
    trajectories: &[Trajectory],
    buffer: &[BufferEntry],
    references: &[Vec<usize>],
    baseline: f64,
    config: &SilTermConfig,
) -> Result<WsilGrad, SilError> {
    let rl = reinforce_grad(policy, trajectories, baseline);
    let sil = wsil_d_term(policy, env, buffer, references, config)?;
    let total = rl.iter().zip(&sil.gradient).map(|(a, b)| a + b).collect();
    Ok(WsilGrad { rl, sil, total })
}
