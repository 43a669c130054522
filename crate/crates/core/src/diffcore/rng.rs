use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Counter-based random stream.
///
/// The full state is `(key, counter)`: the key selects a ChaCha8 keystream and
/// the counter is the number of 64-bit words consumed so far. Two streams with
/// the same pair produce the same outputs regardless of history, which is what
/// lets checkpoints resume bit-exactly.
#[derive(Clone)]
pub struct Rng {
    key: u128,
    counter: u64,
    stream: ChaCha8Rng,
}

impl std::fmt::Debug for Rng {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Rng")
            .field("key", &format_args!("{:#034x}", self.key))
            .field("counter", &self.counter)
            .finish()
    }
}

impl PartialEq for Rng {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.counter == other.counter
    }
}

impl Eq for Rng {}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn expand_key(key: u128) -> [u8; 32] {
    let lo = key as u64;
    let hi = (key >> 64) as u64;
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&lo.to_le_bytes());
    seed[8..16].copy_from_slice(&hi.to_le_bytes());
    seed[16..24].copy_from_slice(&mix64(lo ^ 0x5332_4f5f_4b45_5930).to_le_bytes());
    seed[24..32].copy_from_slice(&mix64(hi ^ 0x5332_4f5f_4b45_5931).to_le_bytes());
    seed
}

impl Rng {
    /// Stream for an experiment seed.
    pub fn from_seed(seed: u64) -> Self {
        let lo = mix64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let hi = mix64(lo ^ seed.rotate_left(32));
        Self::from_state((hi as u128) << 64 | lo as u128, 0)
    }

    pub fn from_state(key: u128, counter: u64) -> Self {
        let mut stream = ChaCha8Rng::from_seed(expand_key(key));
        stream.set_word_pos(counter as u128 * 2);
        Self {
            key,
            counter,
            stream,
        }
    }

    pub fn key(&self) -> u128 {
        self.key
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Child stream seeded from this stream's next output; advances `self`.
    pub fn split(&mut self) -> Rng {
        let lo = self.next_u64();
        let hi = self.next_u64();
        Self::from_state((hi as u128) << 64 | lo as u128, 0)
    }

    /// Child stream identified by `tag`; does not advance `self`.
    pub fn derive(&self, tag: u64) -> Rng {
        let lo = mix64(self.key as u64 ^ mix64(tag));
        let hi = mix64((self.key >> 64) as u64 ^ mix64(tag ^ 0xa076_1d64_78bd_642f));
        Self::from_state((hi as u128) << 64 | lo as u128, 0)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.sample(StandardNormal)
    }

    /// Uniform index in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        self.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.next_u64() as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.stream.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let word = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
    }
}
