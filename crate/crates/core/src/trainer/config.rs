//! Experiment configuration: a sectioned TOML file plus dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algo::{AgentConfig, Algo, UpdateSchedule};
use crate::envs::{Backend, EnvSpec, RandomizationSpec, Task};
use crate::replay::AlphaSchedule;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub task: Task,
    pub pretrain_backend: Backend,
    pub online_backend: Backend,
    /// Steps per episode (T).
    pub episode_len: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: Task::Car,
            pretrain_backend: Backend::Kinematic,
            online_backend: Backend::Dynamic,
            episode_len: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub hidden: usize,
    pub critic_blocks: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub init_temperature: f64,
    pub explore_noise: f64,
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl Default for AgentSection {
    fn default() -> Self {
        let a = AgentConfig::default();
        Self {
            hidden: a.critic_hidden,
            critic_blocks: a.critic_blocks,
            batch_size: 256,
            gamma: a.gamma,
            tau: a.tau,
            // Small enough that the entropy bonus does not swamp the
            // progress reward early in pretraining.
            init_temperature: 1e-3,
            explore_noise: a.explore_noise,
            target_noise: a.target_noise,
            target_noise_clip: a.target_noise_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Environment-step budget across all parallel instances.
    pub env_steps: u64,
    /// Parallel environments (N_e).
    pub parallel_envs: usize,
    /// Updates per parallel step.
    pub utd: u64,
    /// Actor period; absent means the algorithm default (SAC 1, TD3 2).
    pub actor_period: Option<u64>,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// TD3 exploration noise while pretraining; fine-tuning uses the agent's.
    pub explore_noise: f64,
    /// Evaluate every this many parallel steps; 0 evaluates only at the end.
    pub eval_every: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            env_steps: 2_000_000,
            parallel_envs: 512,
            utd: 8,
            actor_period: None,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            explore_noise: 0.5,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    /// Online episodes (N).
    pub episodes: u64,
    /// Updates per episode (K).
    pub updates_per_episode: u64,
    /// Actor period (M) when asymmetric updates are on.
    pub actor_period: u64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Warm-start episodes (N*) when warm starting is on.
    pub warmstart_episodes: u64,
    pub alpha0: f64,
    pub anneal_episodes: u64,
    pub eval_episodes: u64,
    /// Buffers merged into D0 when retention is on.
    pub retain: Vec<PathBuf>,
    pub asymmetric: bool,
    pub warmstart: bool,
    pub retention: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            episodes: 30,
            updates_per_episode: 1250,
            actor_period: 20,
            actor_lr: 1e-5,
            critic_lr: 3e-4,
            warmstart_episodes: 5,
            alpha0: 0.5,
            anneal_episodes: 5,
            eval_episodes: 10,
            retain: Vec::new(),
            asymmetric: true,
            warmstart: true,
            retention: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub algo: Algo,
    pub env: EnvConfig,
    pub agent: AgentSection,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            algo: Algo::Sac,
            env: EnvConfig::default(),
            agent: AgentSection::default(),
            pretrain: PretrainConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

/// Command-line aliases for dotted keys.
const ALIASES: &[(&str, &str)] = &[
    ("M", "finetune.actor_period"),
    ("alpha0", "finetune.alpha0"),
    ("utd", "pretrain.utd"),
    ("warmstart-episodes", "finetune.warmstart_episodes"),
    ("retain", "finetune.retain"),
    ("backend", "env.online_backend"),
    ("algo", "algo"),
    ("seed", "seed"),
];

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one field. `key` is a dotted path (`finetune.alpha0`) or a
    /// command-line alias (`alpha0`, `M`); `value` is a TOML literal, with
    /// bare words read as strings and comma lists as arrays.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let path = ALIASES
            .iter()
            .find(|(alias, _)| *alias == key)
            .map(|(_, p)| *p)
            .unwrap_or(key);
        let mut root = toml::Value::try_from(&*self).expect("config serializes");
        let parts: Vec<&str> = path.split('.').collect();
        let (last, parents) = parts.split_last().expect("non-empty key");
        let mut table = root.as_table_mut().expect("config is a table");
        for p in parents {
            table = table
                .get_mut(*p)
                .and_then(|v| v.as_table_mut())
                .ok_or_else(|| ConfigError::UnknownKey(path.to_string()))?;
        }
        let known = table.contains_key(*last) || is_optional_field(path);
        if !known {
            return Err(ConfigError::UnknownKey(path.to_string()));
        }
        let is_list = table.get(*last).map(|v| v.is_array()).unwrap_or(false);
        table.insert(last.to_string(), parse_literal(value, is_list));
        let updated: Self = root
            .try_into()
            .map_err(|e: toml::de::Error| invalid(path, e.message().to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must be positive")))
            }
        };
        let at_least_one = |key: &str, v: u64| {
            if v >= 1 {
                Ok(())
            } else {
                Err(invalid(key, "must be at least 1"))
            }
        };
        at_least_one("env.episode_len", self.env.episode_len)?;
        at_least_one("agent.hidden", self.agent.hidden as u64)?;
        at_least_one("agent.batch_size", self.agent.batch_size as u64)?;
        if !(0.0..1.0).contains(&self.agent.gamma) {
            return Err(invalid("agent.gamma", format!("{} outside [0, 1)", self.agent.gamma)));
        }
        if !(self.agent.tau > 0.0 && self.agent.tau <= 1.0) {
            return Err(invalid("agent.tau", format!("{} outside (0, 1]", self.agent.tau)));
        }
        positive("agent.init_temperature", self.agent.init_temperature)?;
        at_least_one("pretrain.parallel_envs", self.pretrain.parallel_envs as u64)?;
        if let Some(m) = self.pretrain.actor_period {
            at_least_one("pretrain.actor_period", m)?;
        }
        positive("pretrain.actor_lr", self.pretrain.actor_lr)?;
        positive("pretrain.critic_lr", self.pretrain.critic_lr)?;
        for (key, v) in [
            ("agent.explore_noise", self.agent.explore_noise),
            ("pretrain.explore_noise", self.pretrain.explore_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("{v} is not a finite non-negative value")));
            }
        }
        at_least_one("finetune.updates_per_episode", self.finetune.updates_per_episode)?;
        at_least_one("finetune.actor_period", self.finetune.actor_period)?;
        at_least_one("finetune.eval_episodes", self.finetune.eval_episodes)?;
        positive("finetune.actor_lr", self.finetune.actor_lr)?;
        positive("finetune.critic_lr", self.finetune.critic_lr)?;
        if !(0.0..=1.0).contains(&self.finetune.alpha0) {
            return Err(invalid(
                "finetune.alpha0",
                format!("alpha0 {} outside [0, 1]", self.finetune.alpha0),
            ));
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig {
        let a = &self.agent;
        AgentConfig {
            algo: self.algo,
            obs_dim: self.env.task.obs_dim(),
            act_dim: self.env.task.act_dim(),
            actor_hidden: a.hidden,
            critic_hidden: a.hidden,
            critic_blocks: a.critic_blocks,
            gamma: a.gamma,
            tau: a.tau,
            actor_lr: self.pretrain.actor_lr,
            critic_lr: self.pretrain.critic_lr,
            init_temperature: a.init_temperature,
            explore_noise: a.explore_noise,
            target_noise: a.target_noise,
            target_noise_clip: a.target_noise_clip,
        }
    }

    pub fn env_spec(&self, backend: Backend) -> EnvSpec {
        EnvSpec {
            task: self.env.task,
            backend,
            randomization: RandomizationSpec::default(),
        }
    }

    pub fn pretrain_actor_period(&self) -> u64 {
        self.pretrain.actor_period.unwrap_or(match self.algo {
            Algo::Sac => 1,
            Algo::Td3 => 2,
        })
    }

    /// Updates per parallel step during pretraining.
    pub fn pretrain_schedule(&self) -> UpdateSchedule {
        UpdateSchedule {
            updates: u64::MAX,
            actor_period: self.pretrain_actor_period(),
            actor_lr: self.pretrain.actor_lr,
            critic_lr: self.pretrain.critic_lr,
            episode_len: self.env.episode_len,
            batch_size: self.agent.batch_size,
        }
    }

    /// Online schedule after applying the asymmetric toggle: off means the
    /// symmetric baseline (every step, shared critic rate).
    pub fn finetune_schedule(&self) -> UpdateSchedule {
        let f = &self.finetune;
        let (actor_period, actor_lr) = if f.asymmetric {
            (f.actor_period, f.actor_lr)
        } else {
            (1, f.critic_lr)
        };
        UpdateSchedule {
            updates: f.updates_per_episode,
            actor_period,
            actor_lr,
            critic_lr: f.critic_lr,
            episode_len: self.env.episode_len,
            batch_size: self.agent.batch_size,
        }
    }

    pub fn alpha_schedule(&self) -> AlphaSchedule {
        AlphaSchedule {
            alpha0: self.finetune.alpha0,
            anneal_episodes: self.finetune.anneal_episodes,
            episode: 0,
        }
    }

    /// Warm-start episodes after applying the toggle.
    pub fn warmstart_episodes(&self) -> u64 {
        if self.finetune.warmstart {
            self.finetune.warmstart_episodes
        } else {
            0
        }
    }
}

fn is_optional_field(path: &str) -> bool {
    path == "pretrain.actor_period"
}

fn parse_literal(value: &str, as_list: bool) -> toml::Value {
    if as_list {
        let items = value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| toml::Value::String(s.to_string()))
            .collect();
        return toml::Value::Array(items);
    }
    let wrapped = format!("v = {value}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}
