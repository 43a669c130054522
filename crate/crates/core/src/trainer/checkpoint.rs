//! Checkpoint files: little-endian header `S2OC`, format version, section
//! count, then named length-prefixed sections.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::ExperimentConfig;
use crate::algo::{Agent, Algo};
use crate::diffcore::{DType, Network, OptState, Real, Rng, Tensor};
use crate::envs::Backend;
use crate::replay::AlphaSchedule;

pub const MAGIC: &[u8; 4] = b"S2OC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint or unsupported version: {0}")]
    Version(String),
    #[error("checkpoint has no target networks (section {0:?} missing targets)")]
    MissingTargets(&'static str),
    #[error("checkpoint section {0:?} missing")]
    MissingSection(&'static str),
    #[error("malformed checkpoint section {section:?}: {reason}")]
    Malformed { section: String, reason: String },
    #[error("checkpoint config: {0}")]
    Config(#[from] super::config::ConfigError),
    #[error(transparent)]
    Algo(#[from] crate::algo::AlgoError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Progress counters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    /// Completed online training episodes.
    pub episode: u64,
    pub env_steps: u64,
    pub updates: u64,
    pub warmstart_done: bool,
}

/// Deterministic evaluation recorded alongside the parameters it measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub backend: Backend,
    pub mean_return: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub agent: Agent<f32>,
    pub rng: Rng,
    pub counters: Counters,
    pub schedule: AlphaSchedule,
    pub config: ExperimentConfig,
    pub eval: Option<EvalRecord>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn tensors<T: Real>(&mut self, ts: &[Tensor<T>]) {
        self.u8(T::DTYPE.tag());
        self.u32(ts.len() as u32);
        for t in ts {
            self.u32(t.shape().len() as u32);
            for &d in t.shape() {
                self.u32(d as u32);
            }
            for &v in t.data() {
                v.write_le(&mut self.0);
            }
        }
    }
}

struct Reader<'a> {
    section: &'static str,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(section: &'static str, bytes: &'a [u8]) -> Self {
        Self { section, bytes, at: 0 }
    }

    fn fail(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed {
            section: self.section.to_string(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.at + n > self.bytes.len() {
            return Err(self.fail("truncated"));
        }
        let out = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensors<T: Real>(&mut self) -> Result<Vec<Tensor<T>>, CheckpointError> {
        let tag = self.u8()?;
        if DType::from_tag(tag) != Some(T::DTYPE) {
            return Err(self.fail(format!("dtype tag {tag}, expected {:?}", T::DTYPE)));
        }
        let count = self.u32()? as usize;
        let width = std::mem::size_of::<T>();
        let mut out = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let ndim = self.u32()? as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| self.u32().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let raw = self.take(n * width)?;
            let data = raw.chunks_exact(width).map(T::read_le).collect();
            out.push(Tensor::from_vec(&shape, data).map_err(|e| self.fail(e.to_string()))?);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<(), CheckpointError> {
        if self.at != self.bytes.len() {
            return Err(self.fail("trailing bytes"));
        }
        Ok(())
    }
}

fn opt_section<T: Real>(opt: &OptState<T>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u64(opt.step);
    w.f64(opt.lr);
    w.f64(opt.beta1);
    w.f64(opt.beta2);
    w.f64(opt.eps);
    w.tensors(&opt.first_moment);
    w.tensors(&opt.second_moment);
    w.0
}

fn network_section<T: Real>(net: &Network<T>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.tensors(net.params());
    w.0
}

fn backend_tag(b: Backend) -> u8 {
    match b {
        Backend::Kinematic => 0,
        Backend::Dynamic => 1,
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let a = &ckpt.agent;
    let mut sections: Vec<(&str, Vec<u8>)> = vec![
        ("actor", network_section(&a.actor)),
        ("critic_a", network_section(&a.critic_a)),
        ("critic_b", network_section(&a.critic_b)),
        ("target_a", network_section(&a.target_a)),
        ("target_b", network_section(&a.target_b)),
    ];
    if let Some(t) = &a.target_actor {
        sections.push(("target_actor", network_section(t)));
    }
    let mut w = Writer(Vec::new());
    w.tensors(std::slice::from_ref(&a.log_temp));
    sections.push(("log_temp", w.0));
    sections.push(("opt_actor", opt_section(&a.actor_opt)));
    sections.push(("opt_critic_a", opt_section(&a.critic_a_opt)));
    sections.push(("opt_critic_b", opt_section(&a.critic_b_opt)));
    sections.push(("opt_temp", opt_section(&a.temp_opt)));

    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&ckpt.rng.key().to_le_bytes());
    w.u64(ckpt.rng.counter());
    sections.push(("rng", w.0));

    let c = ckpt.counters;
    let mut w = Writer(Vec::new());
    w.u64(c.episode);
    w.u64(c.env_steps);
    w.u64(c.updates);
    w.u8(c.warmstart_done as u8);
    sections.push(("counters", w.0));

    let s = ckpt.schedule;
    let mut w = Writer(Vec::new());
    w.f64(s.alpha0);
    w.u64(s.anneal_episodes);
    w.u64(s.episode);
    sections.push(("schedule", w.0));

    let mut w = Writer(Vec::new());
    match ckpt.eval {
        None => w.u8(0),
        Some(e) => {
            w.u8(1);
            w.u8(backend_tag(e.backend));
            w.f64(e.mean_return);
            w.f64(e.std_error);
        }
    }
    sections.push(("eval", w.0));
    sections.push(("config", ckpt.config.to_toml().into_bytes()));

    let mut out = Writer(Vec::new());
    out.0.extend_from_slice(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u32(sections.len() as u32);
    for (name, payload) in sections {
        out.u32(name.len() as u32);
        out.0.extend_from_slice(name.as_bytes());
        out.u64(payload.len() as u64);
        out.0.extend_from_slice(&payload);
    }
    out.0
}

/// Splits a file into its named sections.
pub fn sections(bytes: &[u8]) -> Result<Vec<(String, &[u8])>, CheckpointError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::Version("bad magic".into()));
    }
    let mut r = Reader::new("header", bytes);
    r.take(4)?;
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(format!("version {version}, expected {FORMAT_VERSION}")));
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| r.fail("section name not utf-8"))?;
        let plen = r.u64()? as usize;
        out.push((name, r.take(plen)?));
    }
    r.finish()?;
    Ok(out)
}

/// Reassembles a file from sections; used to build damaged checkpoints in tests.
pub fn assemble(sections: &[(String, &[u8])]) -> Vec<u8> {
    let mut out = Writer(Vec::new());
    out.0.extend_from_slice(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u32(sections.len() as u32);
    for (name, payload) in sections {
        out.u32(name.len() as u32);
        out.0.extend_from_slice(name.as_bytes());
        out.u64(payload.len() as u64);
        out.0.extend_from_slice(payload);
    }
    out.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let secs = sections(bytes)?;
    let find = |name: &'static str| secs.iter().find(|(n, _)| n == name).map(|(_, p)| *p);
    let require = |name: &'static str| find(name).ok_or(CheckpointError::MissingSection(name));

    let config_text = std::str::from_utf8(require("config")?).map_err(|_| CheckpointError::Malformed {
        section: "config".into(),
        reason: "not utf-8".into(),
    })?;
    let config = ExperimentConfig::from_toml(config_text)?;
    let mut agent = Agent::<f32>::new(config.agent_config(), &mut Rng::from_seed(0))?;

    for name in ["target_a", "target_b"] {
        if find(name).is_none() {
            return Err(CheckpointError::MissingTargets(name));
        }
    }
    if config.algo == Algo::Td3 && find("target_actor").is_none() {
        return Err(CheckpointError::MissingTargets("target_actor"));
    }

    let load_net = |name: &'static str, net: &mut Network<f32>| -> Result<(), CheckpointError> {
        let mut r = Reader::new(name, require(name)?);
        let ts = r.tensors::<f32>()?;
        r.finish()?;
        net.load_params(ts).map_err(|e| r.fail(e.to_string()))
    };
    load_net("actor", &mut agent.actor)?;
    load_net("critic_a", &mut agent.critic_a)?;
    load_net("critic_b", &mut agent.critic_b)?;
    load_net("target_a", &mut agent.target_a)?;
    load_net("target_b", &mut agent.target_b)?;
    if let Some(t) = agent.target_actor.as_mut() {
        load_net("target_actor", t)?;
    }

    let mut r = Reader::new("log_temp", require("log_temp")?);
    let mut lt = r.tensors::<f32>()?;
    r.finish()?;
    if lt.len() != 1 || lt[0].shape() != [1] {
        return Err(r.fail("expected one scalar"));
    }
    agent.log_temp = lt.remove(0);

    let load_opt = |name: &'static str, like: &OptState<f32>| -> Result<OptState<f32>, CheckpointError> {
        let mut r = Reader::new(name, require(name)?);
        let step = r.u64()?;
        let lr = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let eps = r.f64()?;
        let first_moment = r.tensors::<f32>()?;
        let second_moment = r.tensors::<f32>()?;
        r.finish()?;
        let shapes = |v: &[Tensor<f32>]| v.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>();
        if shapes(&first_moment) != shapes(&like.first_moment) || shapes(&second_moment) != shapes(&like.second_moment) {
            return Err(r.fail("moment shapes do not match the network"));
        }
        Ok(OptState {
            first_moment,
            second_moment,
            step,
            lr,
            beta1,
            beta2,
            eps,
        })
    };
    agent.actor_opt = load_opt("opt_actor", &agent.actor_opt)?;
    agent.critic_a_opt = load_opt("opt_critic_a", &agent.critic_a_opt)?;
    agent.critic_b_opt = load_opt("opt_critic_b", &agent.critic_b_opt)?;
    agent.temp_opt = load_opt("opt_temp", &agent.temp_opt)?;

    let mut r = Reader::new("rng", require("rng")?);
    let key = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let counter = r.u64()?;
    r.finish()?;
    let rng = Rng::from_state(key, counter);

    let mut r = Reader::new("counters", require("counters")?);
    let counters = Counters {
        episode: r.u64()?,
        env_steps: r.u64()?,
        updates: r.u64()?,
        warmstart_done: r.u8()? != 0,
    };
    r.finish()?;

    let mut r = Reader::new("schedule", require("schedule")?);
    let schedule = AlphaSchedule {
        alpha0: r.f64()?,
        anneal_episodes: r.u64()?,
        episode: r.u64()?,
    };
    r.finish()?;

    let mut r = Reader::new("eval", require("eval")?);
    let eval = match r.u8()? {
        0 => None,
        _ => {
            let backend = match r.u8()? {
                0 => Backend::Kinematic,
                1 => Backend::Dynamic,
                t => return Err(r.fail(format!("backend tag {t}"))),
            };
            Some(EvalRecord {
                backend,
                mean_return: r.f64()?,
                std_error: r.f64()?,
            })
        }
    };
    r.finish()?;

    Ok(Checkpoint {
        agent,
        rng,
        counters,
        schedule,
        config,
        eval,
    })
}

/// Writes atomically via a temporary file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("ckpt.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode(ckpt))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn restore_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&fs::read(path)?)
}
