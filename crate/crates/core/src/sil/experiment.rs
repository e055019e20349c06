//! End-to-end training runs built from a [`TrainSpec`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainSpec;
use super::env::ToyEnv;
use super::policy::{pretrain, Policy};
use super::train::{LogRecord, Trainer, Variant};
use super::SilError;
use crate::embeddings::EmbeddingTable;

/// Seed used for Monte-Carlo evaluation, fixed so runs compare on equal terms.
pub const EVAL_SEED: u64 = 0x00e7_a15e;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutcome {
    pub initial_reward: f64,
    pub final_reward: f64,
    pub sil_updates: u64,
    pub rl_updates: u64,
    pub log: Vec<LogRecord>,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRun {
    pub seed: u64,
    pub env_seed: u64,
    pub initial_reward: f64,
    pub variant_reward: f64,
    pub reinforce_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub variant: Variant,
    pub steps: u64,
    pub runs: Vec<PairedRun>,
    /// Pairs where the variant finished at least as high as REINFORCE.
    pub wins: usize,
    pub mean_variant_reward: f64,
    pub mean_reinforce_reward: f64,
}

pub fn build_env(spec: &TrainSpec, table: Option<EmbeddingTable<f64>>) -> Result<ToyEnv, SilError> {
    let env = ToyEnv::new(&spec.env)?.with_ipot(spec.sil.ipot);
    match table {
        Some(t) => env.with_table(t),
        None => Ok(env),
    }
}

pub fn initial_policy(spec: &TrainSpec, env: &ToyEnv) -> Result<Policy, SilError> {
    let mut policy = Policy::for_env(spec.policy, env).with_temperature(spec.temperature)?;
    if spec.pretrain {
        let corpus: Vec<_> = env
            .conditions()
            .into_iter()
            .flat_map(|c| env.corpus(c).iter().map(move |s| (c, s.clone())))
            .collect();
        pretrain(&mut policy, &corpus, spec.pretrain_epochs, spec.pretrain_lr)?;
    }
    Ok(policy)
}

/// Trains from `policy`, reporting each log record through `on_record`.
pub fn run_training(
    spec: &TrainSpec,
    env: &ToyEnv,
    policy: Policy,
    mut on_record: impl FnMut(&LogRecord) -> Result<(), SilError>,
) -> Result<RunOutcome, SilError> {
    let initial_reward = env.evaluate(&policy, spec.eval_samples, EVAL_SEED)?;
    let mut trainer = Trainer::new(env, policy, spec.sil.clone())?;
    let mut log = Vec::with_capacity(spec.steps as usize);
    for _ in 0..spec.steps {
        let record = trainer.step()?;
        on_record(&record)?;
        log.push(record);
    }
    let final_reward = env.evaluate(trainer.policy(), spec.eval_samples, EVAL_SEED)?;
    let (sil_updates, rl_updates) = (trainer.sil_updates(), trainer.rl_updates());
    Ok(RunOutcome { initial_reward, final_reward, sil_updates, rl_updates, log, policy: trainer.into_policy() })
}

/// Pair `i` uses run seed `seed + i` and environment seed `env_seed + i`;
/// both arms of a pair share the environment, warm start and sample seed.
pub fn paired_experiment(
    spec: &TrainSpec,
    pairs: usize,
    table: Option<&EmbeddingTable<f64>>,
) -> Result<PairedSummary, SilError> {
    let runs: Vec<PairedRun> = (0..pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut arm = spec.clone();
            arm.sil.seed = spec.sil.seed.wrapping_add(i);
            arm.env.seed = spec.env.seed.wrapping_add(i);
            let env = build_env(&arm, table.cloned())?;
            let start = initial_policy(&arm, &env)?;
            let variant = run_training(&arm, &env, start.clone(), |_| Ok(()))?;
            arm.sil.variant = Variant::Reinforce;
            let reinforce = run_training(&arm, &env, start, |_| Ok(()))?;
            Ok(PairedRun {
                seed: arm.sil.seed,
                env_seed: arm.env.seed,
                initial_reward: variant.initial_reward,
                variant_reward: variant.final_reward,
                reinforce_reward: reinforce.final_reward,
            })
        })
        .collect::<Result<_, SilError>>()?;
    let n = runs.len().max(1) as f64;
    Ok(PairedSummary {
        variant: spec.sil.variant,
        steps: spec.steps,
        wins: runs.iter().filter(|r| r.variant_reward >= r.reinforce_reward).count(),
        mean_variant_reward: runs.iter().map(|r| r.variant_reward).sum::<f64>() / n,
        mean_reinforce_reward: runs.iter().map(|r| r.reinforce_reward).sum::<f64>() / n,
        runs,
    })
}
