//! Twin-critic actor-critic agents (SAC and TD3) and the asymmetric update
//! schedule.

mod agent;
mod policy;
mod update;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use agent::{Agent, AgentConfig, ActMode};
pub use policy::{squashed_gaussian, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
pub use update::{ActorStats, CriticStats, UpdateMetrics, UpdateSchedule};

use crate::diffcore::DiffError;
use crate::replay::ReplayError;

#[derive(Debug, thiserror::Error)]
pub enum AlgoError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("update index {k} outside 1..={updates}")]
    UpdateIndex { k: u64, updates: u64 },
}

/// Which actor-critic variant an agent runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Sac,
    Td3,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Sac => "sac",
            Algo::Td3 => "td3",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = AlgoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sac" => Ok(Algo::Sac),
            "td3" => Ok(Algo::Td3),
            other => Err(AlgoError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}
