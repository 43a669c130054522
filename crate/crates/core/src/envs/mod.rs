//! Environments: the race car with kinematic and dynamic backends, and a
//! point mass for quick experiments.

pub mod car;
pub mod pointmass;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
pub use car::{
    reset, reward, step_dynamic, step_kinematic, vec_step, CarParams, CarState, CarStep, Observation,
    RandomizationSpec, RewardParams,
};
pub use pointmass::PointMassEnv;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid randomization spec: {0}")]
    InvalidSpec(String),
    #[error("invalid car parameters: {0}")]
    InvalidParams(String),
    #[error("action out of range: {0:?}")]
    InvalidAction(Vec<f64>),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("non-finite state after step: {0}")]
    NonFinite(String),
    #[error("batch shape mismatch: {0}")]
    Batch(String),
    #[error("environment {index} failed: {source}")]
    Element { index: usize, source: Box<EnvError> },
    #[error("unknown {what} {value:?}")]
    Unknown { what: &'static str, value: String },
}

/// Car dynamics backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Slip-free bicycle; the simulation prior.
    Kinematic,
    /// Tire-friction bicycle; the deployment target.
    Dynamic,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Kinematic => "kinematic",
            Backend::Dynamic => "dynamic",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kinematic" => Ok(Backend::Kinematic),
            "dynamic" => Ok(Backend::Dynamic),
            other => Err(EnvError::Unknown {
                what: "backend",
                value: other.to_string(),
            }),
        }
    }
}

/// Which task an experiment runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Car,
    PointMass,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Car => "car",
            Task::PointMass => "pointmass",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Task::Car => car::OBS_DIM,
            Task::PointMass => pointmass::OBS_DIM,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            Task::Car => car::ACT_DIM,
            Task::PointMass => pointmass::ACT_DIM,
        }
    }
}

impl FromStr for Task {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(Task::Car),
            "pointmass" => Ok(Task::PointMass),
            other => Err(EnvError::Unknown {
                what: "task",
                value: other.to_string(),
            }),
        }
    }
}

/// Single environment instance with episode-independent dynamics; episode
/// length and truncation are handled by the caller.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>, EnvError>;
    /// Applies `action`, returning the next observation and the reward.
    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64), EnvError>;
    /// Whether the current state counts as task success.
    fn success(&self) -> bool;
}

/// Car instance bound to one backend.
#[derive(Debug, Clone)]
pub struct CarEnv {
    pub backend: Backend,
    pub spec: RandomizationSpec,
    pub reward: RewardParams,
    pub dt: f64,
    pub state: CarState,
    pub params: CarParams,
}

impl CarEnv {
    pub fn new(backend: Backend, spec: RandomizationSpec) -> Self {
        Self {
            backend,
            spec,
            reward: RewardParams::default(),
            dt: car::CONTROL_DT,
            state: CarState::at_rest(0.0, 0.0, 0.0, [0.0, 0.0]),
            params: CarParams::default(),
        }
    }
}

impl Env for CarEnv {
    fn obs_dim(&self) -> usize {
        car::OBS_DIM
    }

    fn act_dim(&self) -> usize {
        car::ACT_DIM
    }

    fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>, EnvError> {
        let (state, params, obs) = car::reset(rng, &self.spec, self.backend)?;
        self.state = state;
        self.params = params;
        Ok(obs.0.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<(Vec<f64>, f64), EnvError> {
        if action.len() != car::ACT_DIM {
            return Err(EnvError::InvalidAction(action.to_vec()));
        }
        let out = car::transition(
            self.backend,
            &self.state,
            [action[0], action[1]],
            &self.params,
            &self.reward,
            self.dt,
        )?;
        self.state = out.state;
        Ok((out.obs.0.to_vec(), out.reward))
    }

    fn success(&self) -> bool {
        self.state.goal_distance() <= self.reward.goal_radius
    }
}

/// Everything needed to build environment instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub task: Task,
    pub backend: Backend,
    pub randomization: RandomizationSpec,
}

impl EnvSpec {
    pub fn car(backend: Backend) -> Self {
        Self {
            task: Task::Car,
            backend,
            randomization: RandomizationSpec::default(),
        }
    }

    pub fn point_mass() -> Self {
        Self {
            task: Task::PointMass,
            backend: Backend::Dynamic,
            randomization: RandomizationSpec::default(),
        }
    }

    pub fn make(&self) -> Box<dyn Env> {
        match self.task {
            Task::Car => Box::new(CarEnv::new(self.backend, self.randomization)),
            Task::PointMass => Box::new(PointMassEnv::default()),
        }
    }
}

/// Worker count for batched stepping, from `S2O_THREADS` (default 1).
pub fn parallelism() -> usize {
    std::env::var("S2O_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// A batch of independent environments stepped in lockstep.
pub struct VecEnv {
    envs: Vec<Box<dyn Env>>,
    obs_dim: usize,
    act_dim: usize,
}

impl VecEnv {
    pub fn new(spec: &EnvSpec, count: usize) -> Self {
        let envs: Vec<_> = (0..count).map(|_| spec.make()).collect();
        Self {
            obs_dim: spec.task.obs_dim(),
            act_dim: spec.task.act_dim(),
            envs,
        }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    /// Resets every instance from its own child stream, split in index order.
    pub fn reset_all(&mut self, rng: &mut Rng) -> Result<Vec<f64>, EnvError> {
        let mut obs = Vec::with_capacity(self.envs.len() * self.obs_dim);
        for (index, env) in self.envs.iter_mut().enumerate() {
            let mut child = rng.split();
            let o = env.reset(&mut child).map_err(|source| EnvError::Element {
                index,
                source: Box::new(source),
            })?;
            obs.extend_from_slice(&o);
        }
        Ok(obs)
    }

    /// Steps every instance with its row of `actions`; returns flat
    /// observations and per-instance rewards in index order.
    pub fn step_all(&mut self, actions: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EnvError> {
        use rayon::prelude::*;
        if actions.len() != self.envs.len() * self.act_dim {
            return Err(EnvError::Batch(format!(
                "{} action values for {} envs of dim {}",
                actions.len(),
                self.envs.len(),
                self.act_dim
            )));
        }
        let act_dim = self.act_dim;
        let results: Vec<Result<(Vec<f64>, f64), EnvError>> = if parallelism() > 1 {
            self.envs
                .par_iter_mut()
                .zip(actions.par_chunks(act_dim))
                .map(|(env, a)| env.step(a))
                .collect()
        } else {
            self.envs
                .iter_mut()
                .zip(actions.chunks(act_dim))
                .map(|(env, a)| env.step(a))
                .collect()
        };
        let mut obs = Vec::with_capacity(self.envs.len() * self.obs_dim);
        let mut rewards = Vec::with_capacity(self.envs.len());
        for (index, r) in results.into_iter().enumerate() {
            let (o, rew) = r.map_err(|source| EnvError::Element {
                index,
                source: Box::new(source),
            })?;
            obs.extend_from_slice(&o);
            rewards.push(rew);
        }
        Ok((obs, rewards))
    }

    pub fn successes(&self) -> Vec<bool> {
        self.envs.iter().map(|e| e.success()).collect()
    }
}
