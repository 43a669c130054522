use std::hash::{DefaultHasher, Hasher};

use super::policy::squashed_gaussian;
use super::{Algo, AlgoError};
use crate::diffcore::{DiffError, Network, OptState, Real, Rng, Tensor};

/// Architecture and loss constants of an agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentConfig {
    pub algo: Algo,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub critic_blocks: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub init_temperature: f64,
    /// Standard deviation of TD3 exploration noise.
    pub explore_noise: f64,
    /// Standard deviation of TD3 target-policy smoothing noise.
    pub target_noise: f64,
    pub target_noise_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Sac,
            obs_dim: crate::envs::car::OBS_DIM,
            act_dim: crate::envs::car::ACT_DIM,
            actor_hidden: 64,
            critic_hidden: 64,
            critic_blocks: 1,
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            init_temperature: 0.1,
            explore_noise: 0.1,
            target_noise: 0.2,
            target_noise_clip: 0.5,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AlgoError> {
        let fail = |m: String| Err(AlgoError::Config(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.obs_dim == 0 || self.act_dim == 0 || self.actor_hidden == 0 || self.critic_hidden == 0 {
            return fail("dimensions must be positive".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return fail("learning rates must be positive".into());
        }
        if !(self.init_temperature > 0.0) {
            return fail("initial temperature must be positive".into());
        }
        Ok(())
    }

    /// Entropy target: minus the action dimension.
    pub fn target_entropy(&self) -> f64 {
        -(self.act_dim as f64)
    }

    fn actor_outputs(&self) -> usize {
        match self.algo {
            Algo::Sac => 2 * self.act_dim,
            Algo::Td3 => self.act_dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Stochastic,
    Deterministic,
}

/// Actor, twin critics, their targets, the temperature and every optimizer
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent<T> {
    pub cfg: AgentConfig,
    pub actor: Network<T>,
    pub critic_a: Network<T>,
    pub critic_b: Network<T>,
    pub target_a: Network<T>,
    pub target_b: Network<T>,
    /// Present for TD3 only.
    pub target_actor: Option<Network<T>>,
    /// Single-element tensor; the temperature is its exponential.
    pub log_temp: Tensor<T>,
    pub actor_opt: OptState<T>,
    pub critic_a_opt: OptState<T>,
    pub critic_b_opt: OptState<T>,
    pub temp_opt: OptState<T>,
}

/// Row-major `f32`/`f64` data as a `[rows, cols]` tensor.
pub(crate) fn matrix<T: Real, V: Copy + Into<f64>>(cols: usize, values: &[V]) -> Result<Tensor<T>, DiffError> {
    let rows = if cols == 0 { 0 } else { values.len() / cols };
    Tensor::from_vec(&[rows, cols], values.iter().map(|&v| T::from_f64(v.into())).collect())
}

impl<T: Real> Agent<T> {
    pub fn new(cfg: AgentConfig, rng: &mut Rng) -> Result<Self, AlgoError> {
        cfg.validate()?;
        let actor = Network::tanh_mlp(cfg.obs_dim, cfg.actor_hidden, cfg.actor_outputs(), rng)?;
        let q_in = cfg.obs_dim + cfg.act_dim;
        let critic_a = Network::residual_critic(q_in, cfg.critic_hidden, cfg.critic_blocks, rng)?;
        let critic_b = Network::residual_critic(q_in, cfg.critic_hidden, cfg.critic_blocks, rng)?;
        let log_temp = Tensor::from_f64(&[1], &[cfg.init_temperature.ln()])?;
        Ok(Self {
            target_a: critic_a.clone(),
            target_b: critic_b.clone(),
            target_actor: (cfg.algo == Algo::Td3).then(|| actor.clone()),
            actor_opt: OptState::new(actor.params(), cfg.actor_lr),
            critic_a_opt: OptState::new(critic_a.params(), cfg.critic_lr),
            critic_b_opt: OptState::new(critic_b.params(), cfg.critic_lr),
            temp_opt: OptState::new(std::slice::from_ref(&log_temp), cfg.critic_lr),
            cfg,
            actor,
            critic_a,
            critic_b,
            log_temp,
        })
    }

    /// Entropy weight; zero for TD3.
    pub fn temperature(&self) -> f64 {
        match self.cfg.algo {
            Algo::Sac => self.log_temp.data()[0].as_f64().exp(),
            Algo::Td3 => 0.0,
        }
    }

    /// Sets the optimizer step sizes; the temperature follows the critic rate.
    pub fn set_learning_rates(&mut self, actor_lr: f64, critic_lr: f64) {
        self.actor_opt.lr = actor_lr;
        self.critic_a_opt.lr = critic_lr;
        self.critic_b_opt.lr = critic_lr;
        self.temp_opt.lr = critic_lr;
    }

    /// Actions for a batch of observations (row-major), each in `[-1, 1]`.
    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut Rng) -> Result<Vec<f64>, AlgoError> {
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(AlgoError::NonFinite("observation"));
        }
        let a = self.cfg.act_dim;
        let raw = self.actor.forward(&matrix::<T, f64>(self.cfg.obs_dim, obs)?)?.to_f64_vec();
        let rows = raw.len() / self.cfg.actor_outputs();
        let out = match (self.cfg.algo, mode) {
            (Algo::Sac, ActMode::Stochastic) => squashed_gaussian(&raw, a, rng).action,
            (Algo::Sac, ActMode::Deterministic) => (0..rows)
                .flat_map(|r| raw[r * 2 * a..r * 2 * a + a].iter().map(|m| m.tanh()))
                .collect(),
            (Algo::Td3, ActMode::Deterministic) => raw.iter().map(|m| m.tanh()).collect(),
            (Algo::Td3, ActMode::Stochastic) => raw
                .iter()
                .map(|m| (m.tanh() + self.cfg.explore_noise * rng.normal()).clamp(-1.0, 1.0))
                .collect(),
        };
        Ok(out)
    }

    /// `min(Q_A, Q_B)` for rows of observations and actions.
    pub fn q_min(&self, obs: &[f64], actions: &[f64]) -> Result<Vec<f64>, AlgoError> {
        let s = matrix::<T, f64>(self.cfg.obs_dim, obs)?;
        let a = matrix::<T, f64>(self.cfg.act_dim, actions)?;
        let sa = Tensor::concat_cols(&s, &a)?;
        let qa = self.critic_a.forward(&sa)?;
        let qb = self.critic_b.forward(&sa)?;
        Ok(qa.data().iter().zip(qb.data()).map(|(x, y)| x.as_f64().min(y.as_f64())).collect())
    }

    /// Hash of one network's parameter bits.
    pub fn hash_network(net: &Network<T>) -> u64 {
        hash_tensors(net.params())
    }

    /// Hash of every parameter, target, temperature and optimizer moment.
    pub fn state_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for net in [&self.actor, &self.critic_a, &self.critic_b, &self.target_a, &self.target_b] {
            h.write_u64(Self::hash_network(net));
        }
        if let Some(t) = &self.target_actor {
            h.write_u64(Self::hash_network(t));
        }
        h.write_u64(hash_tensors(std::slice::from_ref(&self.log_temp)));
        for opt in [&self.actor_opt, &self.critic_a_opt, &self.critic_b_opt, &self.temp_opt] {
            h.write_u64(hash_tensors(&opt.first_moment));
            h.write_u64(hash_tensors(&opt.second_moment));
            h.write_u64(opt.step);
        }
        h.finish()
    }
}

fn hash_tensors<T: Real>(ts: &[Tensor<T>]) -> u64 {
    let mut h = DefaultHasher::new();
    for t in ts {
        for v in t.data() {
            h.write_u64(v.as_f64().to_bits());
        }
    }
    h.finish()
}
