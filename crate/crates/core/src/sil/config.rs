//! `key = value` training configuration files.
//!
//! Blank lines and `#` comments are ignored; later keys override earlier
//! ones. Unknown keys are an error so typos do not silently fall back to
//! defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::buffer::BufferCriterion;
use super::env::{EnvSpec, RewardKind};
use super::policy::PolicyKind;
use super::train::{BaselineMode, SilConfig, Variant};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { line: usize, key: String, value: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub env: EnvSpec,
    pub policy: PolicyKind,
    pub temperature: f64,
    /// Maximum-likelihood warm start on the environment corpus.
    pub pretrain: bool,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub sil: SilConfig,
    pub steps: u64,
    /// When set, run this many paired (variant, REINFORCE) trainings.
    pub paired_seeds: Option<usize>,
    pub eval_samples: usize,
    pub embeddings: Option<String>,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            env: EnvSpec::default(),
            policy: PolicyKind::Tabular,
            temperature: 1.0,
            pretrain: true,
            pretrain_epochs: 100,
            pretrain_lr: 0.5,
            sil: SilConfig::default(),
            steps: 500,
            paired_seeds: None,
            eval_samples: 200,
            embeddings: None,
        }
    }
}

fn parse_enum<T: for<'de> Deserialize<'de>>(value: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(value.to_string())).map_err(|e| e.to_string())
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| e.to_string())
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

/// Optional integer where `auto` or `none` means unset.
fn parse_opt(value: &str) -> Result<Option<usize>, String> {
    match value {
        "auto" | "none" => Ok(None),
        v => parse_num(v).map(Some),
    }
}

impl TrainSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut spec = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            spec.set(key.trim(), value.trim(), line)?;
        }
        Ok(spec)
    }

    /// Sets one key; `line` is only used in error messages (0 for flags).
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let result: Result<(), String> = (|| {
            match key {
                "vocab_size" => self.env.vocab_size = parse_num(value)?,
                "horizon" => self.env.horizon = parse_num(value)?,
                "reward" => self.env.reward = parse_enum::<RewardKind>(value)?,
                "num_conditions" => self.env.num_conditions = parse_num(value)?,
                "reference_count" => self.env.reference_count = parse_num(value)?,
                "corpus_size" => self.env.corpus_size = parse_num(value)?,
                "oracle_sharpness" => self.env.oracle_sharpness = parse_num(value)?,
                "env_seed" => self.env.seed = parse_num(value)?,
                "policy" => self.policy = parse_enum(value)?,
                "temperature" => self.temperature = parse_num(value)?,
                "pretrain" => self.pretrain = parse_bool(value)?,
                "pretrain_epochs" => self.pretrain_epochs = parse_num(value)?,
                "pretrain_lr" => self.pretrain_lr = parse_num(value)?,
                "variant" => self.sil.variant = parse_enum::<Variant>(value)?,
                "lambda" => self.sil.lambda = parse_num(value)?,
                "k" => self.sil.k = parse_num(value)?,
                "k_prime" => self.sil.k_prime = parse_num(value)?,
                "learning_rate" => self.sil.learning_rate = parse_num(value)?,
                "schedule_initial" => self.sil.schedule.initial_ratio = parse_num(value)?,
                "schedule_final" => self.sil.schedule.final_ratio = parse_num(value)?,
                "schedule_ramp" => self.sil.schedule.ramp_steps = parse_num(value)?,
                "baseline" => {
                    self.sil.baseline = match value {
                        "auto" => None,
                        v => Some(parse_enum::<BaselineMode>(v)?),
                    }
                }
                "ema_decay" => self.sil.ema_decay = parse_num(value)?,
                "buffer_capacity" => self.sil.buffer_capacity = parse_opt(value)?,
                "buffer_criterion" => self.sil.buffer_criterion = parse_enum::<BufferCriterion>(value)?,
                "dedupe" => self.sil.dedupe = parse_bool(value)?,
                "normalized_reward" => self.sil.normalized_reward = parse_bool(value)?,
                "gamma" => self.sil.ipot.gamma = parse_num(value)?,
                "outer_iters" => self.sil.ipot.outer_iters = parse_num(value)?,
                "inner_iters" => self.sil.ipot.inner_sinkhorn_iters = parse_num(value)?,
                "seed" => self.sil.seed = parse_num(value)?,
                "steps" => self.steps = parse_num(value)?,
                "paired_seeds" => self.paired_seeds = parse_opt(value)?,
                "eval_samples" => self.eval_samples = parse_num(value)?,
                "embeddings" => self.embeddings = Some(value.to_string()),
                _ => return Err(String::new()),
            }
            Ok(())
        })();
        result.map_err(|reason| {
            if reason.is_empty() {
                ConfigError::UnknownKey { line, key: key.to_string() }
            } else {
                ConfigError::InvalidValue { line, key: key.to_string(), value: value.to_string(), reason }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_overrides() {
        let text = "# experiment\nvariant = wsil_d   # distributional\nlambda=0.25\n\nk = 3\nk = 4\nreward = conditional\nbuffer_capacity = auto\npaired_seeds = 10\n";
        let spec = TrainSpec::parse(text).unwrap();
        assert_eq!(spec.sil.variant, Variant::WsilD);
        assert_eq!(spec.sil.lambda, 0.25);
        assert_eq!(spec.sil.k, 4);
        assert_eq!(spec.env.reward, RewardKind::Conditional);
        assert_eq!(spec.sil.buffer_capacity, None);
        assert_eq!(spec.paired_seeds, Some(10));
    }

    #[test]
    fn errors_name_the_key_and_line() {
        match TrainSpec::parse("k = 2\nlamda = 0.1\n") {
            Err(ConfigError::UnknownKey { line: 2, key }) => assert_eq!(key, "lamda"),
            other => panic!("{other:?}"),
        }
        match TrainSpec::parse("k = two\n") {
            Err(ConfigError::InvalidValue { line: 1, key, .. }) => assert_eq!(key, "k"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(TrainSpec::parse("just words\n"), Err(ConfigError::Syntax { line: 1 })));
        assert!(TrainSpec::parse("variant = ppo\n").is_err());
        assert!(TrainSpec::parse("dedupe = maybe\n").is_err());
    }

    #[test]
    fn default_round_trips_through_json() {
        let spec = TrainSpec::default();
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<TrainSpec>(&json).unwrap(), spec);
    }
}
