//! Training loop interleaving REINFORCE and self-imitation updates.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{buffer_update, BufferCriterion, BufferEntry, ReplayBuffer};
use super::env::ToyEnv;
use super::grad::{reinforce_grad_with, wsil_d_term, wsil_i_term, SilTermConfig, Similarity};
use super::policy::{greedy_decode, sample_with, Policy, Trajectory};
use super::SilError;
use crate::ot::IpotConfig;

/// Which update rule drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Reinforce,
    WsilI,
    WsilD,
    SilINoW,
    SilDNoW,
}

impl Variant {
    pub fn uses_buffer(self) -> bool {
        self != Variant::Reinforce
    }

    fn similarity(self) -> Similarity {
        match self {
            Variant::SilINoW | Variant::SilDNoW => Similarity::NaiveCosine,
            _ => Similarity::Wasserstein,
        }
    }

    fn is_distributional(self) -> bool {
        matches!(self, Variant::WsilD | Variant::SilDNoW)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMode {
    /// Exponential moving average of batch mean rewards.
    Constant,
    /// Reward of the greedy decode for the same condition.
    Greedy,
}

/// Ratio of self-imitation to RL updates, ramped linearly and realised as an
/// integer period: a SIL update runs once `period` RL updates have happened
/// since the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial_ratio: f64,
    pub final_ratio: f64,
    pub ramp_steps: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { initial_ratio: 0.1, final_ratio: 1.0, ramp_steps: 1000 }
    }
}

impl Schedule {
    pub fn constant_period(period: u32) -> Self {
        let r = 1.0 / f64::from(period.max(1));
        Self { initial_ratio: r, final_ratio: r, ramp_steps: 0 }
    }

    pub fn validate(&self) -> Result<(), SilError> {
        let ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ok(self.initial_ratio) || !ok(self.final_ratio) {
            return Err(SilError::Config("schedule ratios must lie in [0, 1]".into()));
        }
        if (self.initial_ratio == 0.0) != (self.final_ratio == 0.0) {
            return Err(SilError::Config("schedule ratios must both be zero or both positive".into()));
        }
        Ok(())
    }

    fn period_of(ratio: f64) -> u64 {
        (1.0 / ratio).round().max(1.0) as u64
    }

    /// Required RL updates between SIL updates at `step`, `None` if SIL is off.
    pub fn period(&self, step: u64) -> Option<u64> {
        if self.initial_ratio == 0.0 {
            return None;
        }
        let start = Self::period_of(self.initial_ratio);
        let end = Self::period_of(self.final_ratio);
        if self.ramp_steps == 0 || step >= self.ramp_steps {
            return Some(end);
        }
        let frac = step as f64 / self.ramp_steps as f64;
        Some((start as f64 + (end as f64 - start as f64) * frac).round() as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilConfig {
    pub variant: Variant,
    pub lambda: f64,
    /// Samples per update.
    pub k: usize,
    /// Buffer entries per self-imitation update.
    pub k_prime: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    /// `None` picks `Constant` unconditional, `Greedy` conditional.
    pub baseline: Option<BaselineMode>,
    pub ema_decay: f64,
    /// Per-condition capacity; `None` picks 64 unconditional, 5 conditional.
    pub buffer_capacity: Option<usize>,
    pub buffer_criterion: BufferCriterion,
    pub dedupe: bool,
    pub normalized_reward: bool,
    pub ipot: IpotConfig<f64>,
    pub seed: u64,
}

impl Default for SilConfig {
    fn default() -> Self {
        Self {
            variant: Variant::WsilI,
            lambda: 0.1,
            k: 5,
            k_prime: 5,
            learning_rate: 0.1,
            schedule: Schedule::default(),
            baseline: None,
            ema_decay: 0.9,
            buffer_capacity: None,
            buffer_criterion: BufferCriterion::Reward,
            dedupe: true,
            normalized_reward: false,
            ipot: IpotConfig::default(),
            seed: 0,
        }
    }
}

impl SilConfig {
    pub fn validate(&self) -> Result<(), SilError> {
        if self.k == 0 || self.k_prime == 0 {
            return Err(SilError::Config("k and k_prime must be >= 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SilError::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SilError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(SilError::Config("ema_decay must lie in [0, 1)".into()));
        }
        if self.buffer_capacity == Some(0) {
            return Err(SilError::Config("buffer_capacity must be >= 1".into()));
        }
        self.ipot.validate().map_err(|e| SilError::Config(e.to_string()))?;
        self.schedule.validate()
    }

    fn term_config(&self) -> SilTermConfig {
        SilTermConfig {
            lambda: self.lambda,
            normalized: self.normalized_reward,
            similarity: self.variant.similarity(),
            ipot: self.ipot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Rl,
    Sil,
}

/// One NDJSON line of the training log. Contains no wall-clock data, so
/// equal seeds give byte-identical logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub update: UpdateKind,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub baseline: f64,
    pub buffer_len: usize,
    pub buffer_min: Option<f64>,
    pub buffer_max: Option<f64>,
    pub buffer_accepted: usize,
    pub rl_grad_norm: f64,
    pub sil_grad_norm: f64,
    pub sil_active: usize,
    pub rl_updates: u64,
    pub sil_updates: u64,
}

pub struct Trainer<'a> {
    env: &'a ToyEnv,
    policy: Policy,
    config: SilConfig,
    buffer: ReplayBuffer,
    sample_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
    ema: Option<f64>,
    step: u64,
    since_sil: u64,
    rl_updates: u64,
    sil_updates: u64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
}

impl<'a> Trainer<'a> {
    pub fn new(env: &'a ToyEnv, policy: Policy, config: SilConfig) -> Result<Self, SilError> {
        config.validate()?;
        if policy.vocab_size() != env.vocab_size() || policy.horizon() != env.horizon() {
            return Err(SilError::InvalidArgument("policy shape does not match the environment".into()));
        }
        let capacity = config.buffer_capacity.unwrap_or(if env.is_conditional() { 5 } else { 64 });
        let buffer = ReplayBuffer::new(capacity, config.dedupe)?;
        // Buffer sampling has its own stream so sampling trajectories is
        // unaffected by whether self-imitation is active.
        let sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let buffer_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self {
            env,
            policy,
            config,
            buffer,
            sample_rng,
            buffer_rng,
            ema: None,
            step: 0,
            since_sil: 0,
            rl_updates: 0,
            sil_updates: 0,
        })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn sil_updates(&self) -> u64 {
        self.sil_updates
    }

    pub fn rl_updates(&self) -> u64 {
        self.rl_updates
    }

    /// Whether the next step is a self-imitation step.
    fn sil_due(&self) -> bool {
        if !self.config.variant.uses_buffer() {
            return false;
        }
        match self.config.schedule.period(self.step) {
            Some(p) => self.since_sil >= p,
            None => false,
        }
    }

    fn baselines(&self, trajectories: &[Trajectory], batch_mean: f64) -> Result<Vec<f64>, SilError> {
        let mode = self.config.baseline.unwrap_or(if self.env.is_conditional() {
            BaselineMode::Greedy
        } else {
            BaselineMode::Constant
        });
        match mode {
            BaselineMode::Constant => Ok(vec![self.ema.unwrap_or(batch_mean); trajectories.len()]),
            BaselineMode::Greedy => {
                let mut cache: BTreeMap<Option<usize>, f64> = BTreeMap::new();
                trajectories
                    .iter()
                    .map(|t| match cache.get(&t.condition) {
                        Some(b) => Ok(*b),
                        None => {
                            let b = greedy_decode(&self.policy, self.env, t.condition)?.reward;
                            cache.insert(t.condition, b);
                            Ok(b)
                        }
                    })
                    .collect()
            }
        }
    }

    fn sil_gradient(&mut self, trajectories: &[Trajectory]) -> Result<(Vec<f64>, usize), SilError> {
        let cfg = self.config.term_config();
        let mut gradient = vec![0.0; self.policy.num_params()];
        let mut active = 0;
        let mut groups: BTreeMap<Option<usize>, Vec<Trajectory>> = BTreeMap::new();
        for t in trajectories {
            groups.entry(t.condition).or_default().push(t.clone());
        }
        for (condition, group) in groups {
            let sampled: Vec<BufferEntry> = self.buffer.sample(condition, self.config.k_prime, &mut self.buffer_rng);
            let term = if self.config.variant.is_distributional() {
                wsil_d_term(&self.policy, self.env, &sampled, self.env.references(condition), &cfg)?
            } else {
                let mut term = wsil_i_term(&self.policy, self.env, &group, &sampled, &cfg)?;
                // groups are weighted by their share of the batch
                let share = group.len() as f64 / trajectories.len() as f64;
                term.gradient.iter_mut().for_each(|g| *g *= share);
                term
            };
            active += term.active;
            for (g, s) in gradient.iter_mut().zip(&term.gradient) {
                *g += s;
            }
        }
        Ok((gradient, active))
    }

    pub fn step(&mut self) -> Result<LogRecord, SilError> {
        let trajectories = sample_with(&self.policy, self.env, self.config.k, &mut self.sample_rng)?;
        let rewards: Vec<f64> = trajectories.iter().map(|t| t.reward).collect();
        let mean_reward = rewards.iter().sum::<f64>() / rewards.len() as f64;
        let max_reward = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let baselines = self.baselines(&trajectories, mean_reward)?;

        let accepted = if self.config.variant.uses_buffer() {
            buffer_update(&mut self.buffer, &trajectories, self.config.buffer_criterion, self.env, self.step)?
        } else {
            0
        };

        let rl = reinforce_grad_with(&self.policy, &trajectories, &baselines);
        let sil_step = self.sil_due();
        let (sil, sil_active) = if sil_step {
            self.sil_gradient(&trajectories)?
        } else {
            (Vec::new(), 0)
        };
        self.policy.apply(&rl, self.config.learning_rate);
        if sil_step {
            self.policy.apply(&sil, self.config.learning_rate);
            self.since_sil = 0;
            self.sil_updates += 1;
        } else {
            self.since_sil += 1;
            self.rl_updates += 1;
        }

        let d = self.config.ema_decay;
        self.ema = Some(match self.ema {
            Some(e) => d * e + (1.0 - d) * mean_reward,
            None => mean_reward,
        });
        let record = LogRecord {
            step: self.step,
            update: if sil_step { UpdateKind::Sil } else { UpdateKind::Rl },
            mean_reward,
            max_reward,
            baseline: baselines.iter().sum::<f64>() / baselines.len() as f64,
            buffer_len: self.buffer.total_len(),
            buffer_min: self.buffer.all_entries().map(|e| e.priority).reduce(f64::min),
            buffer_max: self.buffer.all_entries().map(|e| e.priority).reduce(f64::max),
            buffer_accepted: accepted,
            rl_grad_norm: norm(&rl),
            sil_grad_norm: norm(&sil),
            sil_active,
            rl_updates: self.rl_updates,
            sil_updates: self.sil_updates,
        };
        self.step += 1;
        Ok(record)
    }

    /// Runs `steps` updates and returns their log records.
    pub fn run(&mut self, steps: u64) -> Result<Vec<LogRecord>, SilError> {
        (0..steps).map(|_| self.step()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sil::env::{EnvSpec, RewardKind};
    use crate::sil::policy::PolicyKind;

    #[test]
    fn constant_period_count_is_closed_form() {
        for p in 1..6u32 {
            for n in [0u64, 1, 7, 50, 101] {
                let s = Schedule::constant_period(p);
                let mut since = 0;
                let mut sil = 0;
                for step in 0..n {
                    if since >= s.period(step).unwrap() {
                        sil += 1;
                        since = 0;
                    } else {
                        since += 1;
                    }
                }
                assert_eq!(sil, n / (u64::from(p) + 1), "p={p} n={n}");
            }
        }
    }

    #[test]
    fn ramp_moves_from_sparse_to_every_other_step() {
        let s = Schedule::default();
        assert_eq!(s.period(0), Some(10));
        assert_eq!(s.period(500), Some(6));
        assert_eq!(s.period(1000), Some(1));
        assert_eq!(s.period(5000), Some(1));
        let off = Schedule { initial_ratio: 0.0, final_ratio: 0.0, ramp_steps: 10 };
        assert_eq!(off.period(3), None);
        assert!(Schedule { initial_ratio: 0.0, final_ratio: 0.5, ramp_steps: 1 }.validate().is_err());
        assert!(Schedule { initial_ratio: 1.5, final_ratio: 0.5, ramp_steps: 1 }.validate().is_err());
    }

    fn setup() -> ToyEnv {
        ToyEnv::new(&EnvSpec { vocab_size: 5, horizon: 4, ..EnvSpec::default() }).unwrap()
    }

    #[test]
    fn trainer_counts_updates_and_is_deterministic() {
        let env = setup();
        let cfg = SilConfig { schedule: Schedule::constant_period(2), ..SilConfig::default() };
        let run = || {
            let mut t = Trainer::new(&env, Policy::for_env(PolicyKind::Tabular, &env), cfg.clone()).unwrap();
            let log = t.run(30).unwrap();
            (log, t.into_policy())
        };
        let (a, pa) = run();
        let (b, pb) = run();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        let last = a.last().unwrap();
        assert_eq!(last.sil_updates, 10);
        assert_eq!(last.rl_updates, 20);
        assert!(a.iter().all(|r| r.buffer_len <= 64));
    }

    #[test]
    fn zero_lambda_matches_reinforce_exactly() {
        let env = setup();
        let base = SilConfig { schedule: Schedule::constant_period(1), lambda: 0.0, ..SilConfig::default() };
        let mut a = Trainer::new(&env, Policy::for_env(PolicyKind::Tabular, &env), base.clone()).unwrap();
        let reinforce = SilConfig { variant: Variant::Reinforce, ..base };
        let mut b = Trainer::new(&env, Policy::for_env(PolicyKind::Tabular, &env), reinforce).unwrap();
        a.run(40).unwrap();
        b.run(40).unwrap();
        assert_eq!(a.policy().params(), b.policy().params());
    }

    #[test]
    fn conditional_buffers_stay_per_condition() {
        let spec = EnvSpec { reward: RewardKind::Conditional, num_conditions: 3, vocab_size: 4, horizon: 3, reference_count: 2, ..EnvSpec::default() };
        let env = ToyEnv::new(&spec).unwrap();
        for variant in [Variant::WsilI, Variant::WsilD, Variant::SilINoW, Variant::SilDNoW] {
            let cfg = SilConfig { variant, schedule: Schedule::constant_period(1), ..SilConfig::default() };
            let mut t = Trainer::new(&env, Policy::for_env(PolicyKind::Linear, &env), cfg).unwrap();
            t.run(12).unwrap();
            for c in env.conditions() {
                assert!(t.buffer().len(c) <= 5);
            }
            assert!(t.policy().params().iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn greedy_baseline_runs() {
        let env = setup();
        let cfg = SilConfig { baseline: Some(BaselineMode::Greedy), buffer_criterion: BufferCriterion::F1Bleu, ..SilConfig::default() };
        let mut t = Trainer::new(&env, Policy::for_env(PolicyKind::Tabular, &env), cfg).unwrap();
        let log = t.run(5).unwrap();
        assert!(log.iter().all(|r| r.baseline.is_finite()));
    }

    #[test]
    fn rejects_bad_config() {
        let env = setup();
        let p = Policy::for_env(PolicyKind::Tabular, &env);
        assert!(Trainer::new(&env, p.clone(), SilConfig { k: 0, ..SilConfig::default() }).is_err());
        assert!(Trainer::new(&env, p.clone(), SilConfig { lambda: -1.0, ..SilConfig::default() }).is_err());
        assert!(Trainer::new(&env, p, SilConfig { buffer_capacity: Some(0), ..SilConfig::default() }).is_err());
    }
}
