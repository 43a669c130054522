//! Transition storage, the dual-buffer mixture sampler and buffer files.

mod buffer;
mod io;
mod sampler;

pub use buffer::{EndFlag, ReplayBuffer, TransitionRecord};
pub use io::{decode, encode, load, load_expecting, save, FORMAT_VERSION, MAGIC};
pub use sampler::{AlphaSchedule, Batch, DualSampler};

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dimension mismatch: expected obs {expected:?}, found {found:?} (obs_dim, act_dim)")]
    Dimension {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("buffer capacity must be at least 1")]
    ZeroCapacity,
    #[error("{0} buffer is empty but has nonzero mixture weight")]
    Empty(&'static str),
    #[error("mixture weight {0} outside [0, 1]")]
    InvalidAlpha(f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("not a buffer file or unsupported version: {0}")]
    Version(String),
    #[error("truncated buffer file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("invalid flag byte {0} in record {1}")]
    Flag(u8, u64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
