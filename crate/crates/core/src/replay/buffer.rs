use super::ReplayError;

/// How a transition ended. Terminal zeroes the bootstrap; truncated (time
/// limit) keeps it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndFlag {
    #[default]
    None,
    Terminal,
    Truncated,
}

impl EndFlag {
    pub fn byte(self) -> u8 {
        match self {
            EndFlag::None => 0,
            EndFlag::Terminal => 1,
            EndFlag::Truncated => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(EndFlag::None),
            1 => Some(EndFlag::Terminal),
            2 => Some(EndFlag::Truncated),
            _ => None,
        }
    }

    pub fn is_terminal(self) -> bool {
        self == EndFlag::Terminal
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub obs: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_obs: Vec<f32>,
    pub flag: EndFlag,
}

impl TransitionRecord {
    /// Narrows an `f64` transition to storage precision.
    pub fn from_f64(obs: &[f64], action: &[f64], reward: f64, next_obs: &[f64], flag: EndFlag) -> Self {
        let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect();
        Self {
            obs: narrow(obs),
            action: narrow(action),
            reward: reward as f32,
            next_obs: narrow(next_obs),
            flag,
        }
    }
}

/// FIFO ring of transitions stored column-wise. Storage grows on demand up
/// to `capacity`, so an unbounded buffer costs only what it holds.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    act_dim: usize,
    capacity: usize,
    /// Slot of the oldest record once the ring has wrapped.
    head: usize,
    obs: Vec<f32>,
    action: Vec<f32>,
    reward: Vec<f32>,
    next_obs: Vec<f32>,
    flag: Vec<EndFlag>,
}

impl PartialEq for ReplayBuffer {
    /// Equal dimensions and the same records in the same order.
    fn eq(&self, other: &Self) -> bool {
        self.obs_dim == other.obs_dim
            && self.act_dim == other.act_dim
            && self.len() == other.len()
            && self.iter().zip(other.iter()).all(|(a, b)| {
                a.flag == b.flag
                    && bits(&a.obs) == bits(&b.obs)
                    && bits(&a.action) == bits(&b.action)
                    && a.reward.to_bits() == b.reward.to_bits()
                    && bits(&a.next_obs) == bits(&b.next_obs)
            })
    }
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, act_dim: usize, capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(Self::with_capacity_unchecked(obs_dim, act_dim, capacity))
    }

    /// Buffer that never evicts.
    pub fn unbounded(obs_dim: usize, act_dim: usize) -> Self {
        Self::with_capacity_unchecked(obs_dim, act_dim, usize::MAX)
    }

    fn with_capacity_unchecked(obs_dim: usize, act_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            capacity,
            head: 0,
            obs: Vec::new(),
            action: Vec::new(),
            reward: Vec::new(),
            next_obs: Vec::new(),
            flag: Vec::new(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    fn check_dims(&self, obs: usize, act: usize, next: usize) -> Result<(), ReplayError> {
        if obs != self.obs_dim || act != self.act_dim || next != self.obs_dim {
            return Err(ReplayError::Dimension {
                expected: (self.obs_dim, self.act_dim),
                found: (obs.max(next), act),
            });
        }
        Ok(())
    }

    /// Stores a record, evicting the oldest when full.
    pub fn push(&mut self, r: &TransitionRecord) -> Result<(), ReplayError> {
        self.check_dims(r.obs.len(), r.action.len(), r.next_obs.len())?;
        for (name, values) in [("obs", &r.obs), ("action", &r.action), ("next_obs", &r.next_obs)] {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(ReplayError::NonFinite(name));
            }
        }
        if !r.reward.is_finite() {
            return Err(ReplayError::NonFinite("reward"));
        }
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&r.obs);
            self.action.extend_from_slice(&r.action);
            self.reward.push(r.reward);
            self.next_obs.extend_from_slice(&r.next_obs);
            self.flag.push(r.flag);
        } else {
            let slot = self.head;
            let (o, a) = (self.obs_dim, self.act_dim);
            self.obs[slot * o..(slot + 1) * o].copy_from_slice(&r.obs);
            self.action[slot * a..(slot + 1) * a].copy_from_slice(&r.action);
            self.reward[slot] = r.reward;
            self.next_obs[slot * o..(slot + 1) * o].copy_from_slice(&r.next_obs);
            self.flag[slot] = r.flag;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Storage slot of the `i`-th oldest record.
    fn slot(&self, i: usize) -> usize {
        let n = self.len();
        if n < self.capacity {
            i
        } else {
            (self.head + i) % n
        }
    }

    /// The `i`-th oldest record.
    pub fn get(&self, i: usize) -> Option<TransitionRecord> {
        if i >= self.len() {
            return None;
        }
        let s = self.slot(i);
        Some(self.record_at_slot(s))
    }

    fn record_at_slot(&self, s: usize) -> TransitionRecord {
        let (o, a) = (self.obs_dim, self.act_dim);
        TransitionRecord {
            obs: self.obs[s * o..(s + 1) * o].to_vec(),
            action: self.action[s * a..(s + 1) * a].to_vec(),
            reward: self.reward[s],
            next_obs: self.next_obs[s * o..(s + 1) * o].to_vec(),
            flag: self.flag[s],
        }
    }

    /// Records from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = TransitionRecord> + '_ {
        (0..self.len()).map(move |i| self.record_at_slot(self.slot(i)))
    }

    /// Appends the `i`-th oldest record's fields to the batch columns.
    pub(crate) fn copy_into(&self, i: usize, batch: &mut super::Batch) {
        let s = self.slot(i);
        let (o, a) = (self.obs_dim, self.act_dim);
        batch.obs.extend_from_slice(&self.obs[s * o..(s + 1) * o]);
        batch.action.extend_from_slice(&self.action[s * a..(s + 1) * a]);
        batch.reward.push(self.reward[s]);
        batch.next_obs.extend_from_slice(&self.next_obs[s * o..(s + 1) * o]);
        batch.terminal.push(self.flag[s].is_terminal());
    }

    /// Concatenation in argument order with capacity equal to the total size.
    pub fn merge(obs_dim: usize, act_dim: usize, buffers: &[&ReplayBuffer]) -> Result<Self, ReplayError> {
        let total: usize = buffers.iter().map(|b| b.len()).sum();
        let mut out = Self::with_capacity_unchecked(obs_dim, act_dim, total);
        for b in buffers {
            if b.obs_dim != obs_dim || b.act_dim != act_dim {
                return Err(ReplayError::Dimension {
                    expected: (obs_dim, act_dim),
                    found: (b.obs_dim, b.act_dim),
                });
            }
            for r in b.iter() {
                out.push(&r)?;
            }
        }
        Ok(out)
    }
}
