use super::{ReplayBuffer, ReplayError};
use crate::diffcore::Rng;

/// Linear anneal of the online mixture weight from `alpha0` to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaSchedule {
    pub alpha0: f64,
    pub anneal_episodes: u64,
    /// Index of the episode currently being trained on.
    pub episode: u64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            anneal_episodes: 5,
            episode: 0,
        }
    }
}

impl AlphaSchedule {
    pub fn new(alpha0: f64, anneal_episodes: u64) -> Result<Self, ReplayError> {
        let s = Self {
            alpha0,
            anneal_episodes,
            episode: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        if !(0.0..=1.0).contains(&self.alpha0) {
            return Err(ReplayError::InvalidSchedule(format!("alpha0 {} outside [0, 1]", self.alpha0)));
        }
        Ok(())
    }

    pub fn alpha_at(&self, episode: u64) -> f64 {
        if episode >= self.anneal_episodes {
            return 1.0;
        }
        let frac = episode as f64 / self.anneal_episodes as f64;
        self.alpha0 + (1.0 - self.alpha0) * frac
    }

    pub fn current(&self) -> f64 {
        self.alpha_at(self.episode)
    }
}

/// Minibatch in column layout, one row per transition.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: Vec<f32>,
    pub next_obs: Vec<f32>,
    pub terminal: Vec<bool>,
    /// Whether each row came from the offline buffer.
    pub offline: Vec<bool>,
}

impl Batch {
    pub fn with_dims(obs_dim: usize, act_dim: usize, rows: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            obs: Vec::with_capacity(rows * obs_dim),
            action: Vec::with_capacity(rows * act_dim),
            reward: Vec::with_capacity(rows),
            next_obs: Vec::with_capacity(rows * obs_dim),
            terminal: Vec::with_capacity(rows),
            offline: Vec::with_capacity(rows),
        }
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    /// Every row from one buffer, in order; used by tests and oracles.
    pub fn from_buffer(buffer: &ReplayBuffer) -> Self {
        let mut b = Self::with_dims(buffer.obs_dim(), buffer.act_dim(), buffer.len());
        for i in 0..buffer.len() {
            buffer.copy_into(i, &mut b);
            b.offline.push(false);
        }
        b
    }

    /// Reorders rows by `perm`.
    fn permute(&self, perm: &[usize]) -> Self {
        let (o, a) = (self.obs_dim, self.act_dim);
        let mut out = Self::with_dims(o, a, perm.len());
        for &i in perm {
            out.obs.extend_from_slice(&self.obs[i * o..(i + 1) * o]);
            out.action.extend_from_slice(&self.action[i * a..(i + 1) * a]);
            out.reward.push(self.reward[i]);
            out.next_obs.extend_from_slice(&self.next_obs[i * o..(i + 1) * o]);
            out.terminal.push(self.terminal[i]);
            out.offline.push(self.offline[i]);
        }
        out
    }
}

/// Offline buffer D0 and online buffer mixed by an annealed weight.
#[derive(Debug, Clone)]
pub struct DualSampler {
    pub offline: ReplayBuffer,
    pub online: ReplayBuffer,
    pub schedule: AlphaSchedule,
}

impl DualSampler {
    pub fn new(offline: ReplayBuffer, online: ReplayBuffer, schedule: AlphaSchedule) -> Result<Self, ReplayError> {
        if (offline.obs_dim(), offline.act_dim()) != (online.obs_dim(), online.act_dim()) {
            return Err(ReplayError::Dimension {
                expected: (online.obs_dim(), online.act_dim()),
                found: (offline.obs_dim(), offline.act_dim()),
            });
        }
        schedule.validate()?;
        Ok(Self {
            offline,
            online,
            schedule,
        })
    }

    /// Scheduled weight, forced to 1 when there is no offline data.
    pub fn effective_alpha(&self) -> f64 {
        if self.offline.is_empty() {
            1.0
        } else {
            self.schedule.current()
        }
    }

    /// Offline share of a batch of `batch_size` at weight `alpha`.
    pub fn offline_count(alpha: f64, batch_size: usize) -> usize {
        ((1.0 - alpha) * batch_size as f64).round() as usize
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<Batch, ReplayError> {
        self.sample_with_alpha(self.effective_alpha(), batch_size, rng)
    }

    /// Draws exactly `round((1 - alpha) B)` rows uniformly with replacement
    /// from D0, the rest from the online buffer, then shuffles row order.
    pub fn sample_with_alpha(&self, alpha: f64, batch_size: usize, rng: &mut Rng) -> Result<Batch, ReplayError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ReplayError::InvalidAlpha(alpha));
        }
        let n_off = Self::offline_count(alpha, batch_size);
        let n_on = batch_size - n_off;
        if n_off > 0 && self.offline.is_empty() {
            return Err(ReplayError::Empty("offline"));
        }
        if n_on > 0 && self.online.is_empty() {
            return Err(ReplayError::Empty("online"));
        }
        let mut raw = Batch::with_dims(self.online.obs_dim(), self.online.act_dim(), batch_size);
        for _ in 0..n_off {
            self.offline.copy_into(rng.index(self.offline.len()), &mut raw);
            raw.offline.push(true);
        }
        for _ in 0..n_on {
            self.online.copy_into(rng.index(self.online.len()), &mut raw);
            raw.offline.push(false);
        }
        let mut perm: Vec<usize> = (0..batch_size).collect();
        rng.shuffle(&mut perm);
        Ok(raw.permute(&perm))
    }
}
