pub mod diffcore;
pub mod envs;
pub mod replay;
pub mod algo;
pub mod trainer;
pub mod diagnostics;

pub use algo::{ActMode, Agent, AgentConfig, Algo, UpdateSchedule};
pub use diffcore::Rng;
pub use envs::{Backend, Env, EnvSpec, Task, VecEnv};
pub use replay::{AlphaSchedule, DualSampler, ReplayBuffer, TransitionRecord};
pub use trainer::{Checkpoint, ExperimentConfig, RunPaths, TrialManifest};
