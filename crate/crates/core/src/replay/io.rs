//! Buffer files: little-endian header `S2OB`, version, obs_dim, act_dim,
//! record count, then packed f32 records each followed by a flag byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EndFlag, ReplayBuffer, ReplayError, TransitionRecord};

pub const MAGIC: &[u8; 4] = b"S2OB";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

fn record_len(obs_dim: usize, act_dim: usize) -> usize {
    (2 * obs_dim + act_dim + 1) * 4 + 1
}

pub fn encode(buffer: &ReplayBuffer) -> Vec<u8> {
    let (o, a) = (buffer.obs_dim(), buffer.act_dim());
    let mut out = Vec::with_capacity(HEADER_LEN + buffer.len() * record_len(o, a));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(o as u32).to_le_bytes());
    out.extend_from_slice(&(a as u32).to_le_bytes());
    out.extend_from_slice(&(buffer.len() as u64).to_le_bytes());
    for r in buffer.iter() {
        for v in r.obs.iter().chain(&r.action).chain(std::iter::once(&r.reward)).chain(&r.next_obs) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(r.flag.byte());
    }
    out
}

/// Writes via a temporary file and rename so readers never see a partial file.
pub fn save(buffer: &ReplayBuffer, path: &Path) -> Result<(), ReplayError> {
    let tmp = path.with_extension("s2ob.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(buffer))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> Result<ReplayBuffer, ReplayError> {
    if bytes.len() < HEADER_LEN {
        return Err(ReplayError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(ReplayError::Version(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u32_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(ReplayError::Version(format!("version {version}, expected {FORMAT_VERSION}")));
    }
    let o = u32_at(bytes, 8) as usize;
    let a = u32_at(bytes, 12) as usize;
    let count = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let rec = record_len(o, a) as u64;
    let expected = count
        .checked_mul(rec)
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| ReplayError::Version(format!("record count {count} overflows")))?;
    if bytes.len() as u64 != expected {
        return Err(ReplayError::Truncated {
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut buffer = ReplayBuffer::unbounded(o, a);
    let floats = 2 * o + a + 1;
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(rec as usize).enumerate() {
        let vals: Vec<f32> = chunk[..floats * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let flag_byte = chunk[floats * 4];
        let flag = EndFlag::from_byte(flag_byte).ok_or(ReplayError::Flag(flag_byte, i as u64))?;
        buffer.push(&TransitionRecord {
            obs: vals[..o].to_vec(),
            action: vals[o..o + a].to_vec(),
            reward: vals[o + a],
            next_obs: vals[o + a + 1..].to_vec(),
            flag,
        })?;
    }
    Ok(buffer)
}

/// Loads a buffer; the result never evicts.
pub fn load(path: &Path) -> Result<ReplayBuffer, ReplayError> {
    decode(&fs::read(path)?)
}

/// Loads a buffer and checks its record dimensions.
pub fn load_expecting(path: &Path, obs_dim: usize, act_dim: usize) -> Result<ReplayBuffer, ReplayError> {
    let bytes = fs::read(path)?;
    if bytes.len() >= HEADER_LEN && &bytes[..4] == MAGIC {
        let found = (u32_at(&bytes, 8) as usize, u32_at(&bytes, 12) as usize);
        if found != (obs_dim, act_dim) {
            return Err(ReplayError::Dimension {
                expected: (obs_dim, act_dim),
                found,
            });
        }
    }
    decode(&bytes)
}
