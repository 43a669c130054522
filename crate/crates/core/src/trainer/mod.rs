//! Experiment orchestration: vectorized pretraining, the episodic online
//! loop with warm start and retention, evaluation, and resumable runs.

pub mod checkpoint;
pub mod config;
pub mod logs;

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::algo::{ActMode, Agent, AlgoError, UpdateMetrics};
use crate::diffcore::Rng;
use crate::envs::{Backend, Env, EnvError, EnvSpec, VecEnv};
use crate::replay::{self, DualSampler, EndFlag, ReplayBuffer, ReplayError, TransitionRecord};

pub use checkpoint::{restore_checkpoint, save_checkpoint, Checkpoint, CheckpointError, Counters, EvalRecord};
pub use config::{ConfigError, ExperimentConfig};
pub use logs::{EpisodeRow, EvalRow, MetricsRow, QvalRecord, RunPaths};

const INIT_STREAM: u64 = 0x1001;
const PRETRAIN_ENV_STREAM: u64 = 0x1002;
const EVAL_STREAM: u64 = 0x1003;
const ONLINE_STREAM: u64 = 0x1004;

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error("training diverged at episode {episode}, update {k}: {source}")]
    Diverged { episode: u64, k: u64, source: AlgoError },
    #[error("phase violation: {0}")]
    Phase(String),
    #[error("invalid trial manifest: {0}")]
    Manifest(String),
    #[error("invalid run state: {0}")]
    State(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// What the orchestrator is doing; collection and updates never overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Collecting,
    Updating,
}

#[derive(Debug)]
pub struct PhaseFlag {
    phase: Phase,
}

impl Default for PhaseFlag {
    fn default() -> Self {
        Self { phase: Phase::Idle }
    }
}

impl PhaseFlag {
    pub fn current(&self) -> Phase {
        self.phase
    }

    pub fn begin(&mut self, phase: Phase) -> Result<(), TrainerError> {
        if self.phase != Phase::Idle {
            return Err(TrainerError::Phase(format!("cannot start {phase:?} during {:?}", self.phase)));
        }
        self.phase = phase;
        Ok(())
    }

    pub fn require(&self, phase: Phase) -> Result<(), TrainerError> {
        if self.phase != phase {
            return Err(TrainerError::Phase(format!("expected {phase:?}, in {:?}", self.phase)));
        }
        Ok(())
    }

    pub fn end(&mut self) {
        self.phase = Phase::Idle;
    }
}

/// One collected episode with the critic's estimate at every step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    /// `min(Q_A, Q_B)(s_t, a_t)` under the parameters that collected the episode.
    pub q: Vec<f64>,
    /// Undiscounted return.
    pub ret: f64,
    pub success: bool,
    pub wallclock_s: f64,
}

impl EpisodeLog {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Replay records; the final step is a time-out, never a terminal.
    pub fn transitions(&self) -> impl Iterator<Item = TransitionRecord> + '_ {
        let (o, a, t) = (self.obs_dim, self.act_dim, self.len());
        (0..t).map(move |i| {
            let flag = if i + 1 == t { EndFlag::Truncated } else { EndFlag::None };
            TransitionRecord::from_f64(
                &self.obs[i * o..(i + 1) * o],
                &self.actions[i * a..(i + 1) * a],
                self.rewards[i],
                &self.next_obs[i * o..(i + 1) * o],
                flag,
            )
        })
    }

    pub fn qval_record(&self) -> QvalRecord {
        QvalRecord {
            episode: self.episode,
            rewards: self.rewards.clone(),
            q: self.q.clone(),
        }
    }
}

/// Runs `agent` for `steps` steps from a fresh reset of `env`.
pub fn run_episode(
    agent: &Agent<f32>,
    env: &mut dyn Env,
    steps: u64,
    mode: ActMode,
    rng: &mut Rng,
) -> Result<EpisodeLog, TrainerError> {
    if steps == 0 {
        return Err(TrainerError::State("episode length must be at least 1".into()));
    }
    let start = Instant::now();
    let (o, a) = (env.obs_dim(), env.act_dim());
    let t = steps as usize;
    let mut log = EpisodeLog {
        episode: 0,
        obs_dim: o,
        act_dim: a,
        obs: Vec::with_capacity(t * o),
        actions: Vec::with_capacity(t * a),
        rewards: Vec::with_capacity(t),
        next_obs: Vec::with_capacity(t * o),
        q: Vec::new(),
        ret: 0.0,
        success: false,
        wallclock_s: 0.0,
    };
    let mut obs = env.reset(rng)?;
    for _ in 0..t {
        let action = agent.act(&obs, mode, rng)?;
        let (next, reward) = env.step(&action)?;
        log.obs.extend_from_slice(&obs);
        log.actions.extend_from_slice(&action);
        log.rewards.push(reward);
        log.next_obs.extend_from_slice(&next);
        log.ret += reward;
        obs = next;
    }
    log.success = env.success();
    log.q = agent.q_min(&log.obs, &log.actions)?;
    log.wallclock_s = start.elapsed().as_secs_f64();
    Ok(log)
}

/// Fills `buffer` with `episodes` stochastic episodes of the frozen agent;
/// returns the number of transitions added.
pub fn warm_start(
    agent: &Agent<f32>,
    env: &mut dyn Env,
    episodes: u64,
    steps: u64,
    rng: &mut Rng,
    buffer: &mut ReplayBuffer,
) -> Result<u64, TrainerError> {
    let mut added = 0;
    for _ in 0..episodes {
        let log = run_episode(agent, env, steps, ActMode::Stochastic, rng)?;
        for r in log.transitions() {
            buffer.push(&r)?;
            added += 1;
        }
    }
    Ok(added)
}

/// Deterministic-policy statistics over a set of evaluation episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalStats {
    pub mean: f64,
    /// Sample standard deviation over episodes divided by `sqrt(E)`; zero for one episode.
    pub std_error: f64,
    pub returns: Vec<f64>,
    pub success_rate: f64,
}

/// Mean and standard error over `values`, with zero error for a single value.
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `episodes` deterministic episodes in lockstep on fresh instances of `spec`.
pub fn evaluate(
    agent: &Agent<f32>,
    spec: &EnvSpec,
    steps: u64,
    episodes: u64,
    rng: &mut Rng,
) -> Result<EvalStats, TrainerError> {
    if episodes == 0 {
        return Err(TrainerError::State("evaluation needs at least one episode".into()));
    }
    let mut venv = VecEnv::new(spec, episodes as usize);
    let mut obs = venv.reset_all(rng)?;
    let mut returns = vec![0.0; episodes as usize];
    for _ in 0..steps {
        let actions = agent.act(&obs, ActMode::Deterministic, rng)?;
        let (next, rewards) = venv.step_all(&actions)?;
        for (r, x) in returns.iter_mut().zip(&rewards) {
            *r += x;
        }
        obs = next;
    }
    let successes = venv.successes();
    let success_rate = successes.iter().filter(|&&s| s).count() as f64 / successes.len() as f64;
    let (mean, std_error) = mean_and_std_error(&returns);
    Ok(EvalStats {
        mean,
        std_error,
        returns,
        success_rate,
    })
}

/// The fixed evaluation stream of a seed; every evaluation starts from a
/// clone, so evaluations differ only through the policy.
pub fn eval_stream(seed: u64) -> Rng {
    Rng::from_seed(seed).derive(EVAL_STREAM)
}

fn evaluate_config(agent: &Agent<f32>, cfg: &ExperimentConfig, backend: Backend) -> Result<EvalStats, TrainerError> {
    evaluate(
        agent,
        &cfg.env_spec(backend),
        cfg.env.episode_len,
        cfg.finetune.eval_episodes,
        &mut eval_stream(cfg.seed),
    )
}

/// One point of a pretraining learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub env_steps: u64,
    pub updates: u64,
    pub mean_return: f64,
    pub wallclock_s: f64,
}

pub struct PretrainOutput {
    pub checkpoint: Checkpoint,
    pub buffer: ReplayBuffer,
    pub curve: Vec<CurvePoint>,
}

fn check_update(result: Result<UpdateMetrics, AlgoError>, episode: u64, k: u64) -> Result<UpdateMetrics, TrainerError> {
    match result {
        Ok(m) if m.critic_loss.is_finite() && m.mean_q.is_finite() && m.actor_loss.is_none_or(f64::is_finite) => Ok(m),
        Ok(_) => Err(TrainerError::Diverged {
            episode,
            k,
            source: AlgoError::NonFinite("training signal"),
        }),
        Err(e @ (AlgoError::NonFinite(_) | AlgoError::Diff(crate::diffcore::DiffError::NonFinite(_)))) => {
            Err(TrainerError::Diverged { episode, k, source: e })
        }
        Err(e) => Err(e.into()),
    }
}

/// Freshly initialized agent of a configuration; a function of the seed only.
pub fn initial_agent(cfg: &ExperimentConfig) -> Result<Agent<f32>, TrainerError> {
    Ok(Agent::new(cfg.agent_config(), &mut Rng::from_seed(cfg.seed).derive(INIT_STREAM))?)
}

/// Pretrains on the prior backend: each parallel step collects one
/// transition per environment, then runs `utd` updates. Episodes end
/// together every `episode_len` steps with a time-out flag.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutput, TrainerError> {
    cfg.validate()?;
    let root = Rng::from_seed(cfg.seed);
    let mut agent = initial_agent(cfg)?;
    agent.cfg.explore_noise = cfg.pretrain.explore_noise;
    let mut env_rng = root.derive(PRETRAIN_ENV_STREAM);
    let mut rng = root;
    let spec = cfg.env_spec(cfg.env.pretrain_backend);
    let n_env = cfg.pretrain.parallel_envs;
    let mut venv = VecEnv::new(&spec, n_env);
    let (o, a) = (venv.obs_dim(), venv.act_dim());
    let mut sampler = DualSampler::new(
        ReplayBuffer::unbounded(o, a),
        ReplayBuffer::unbounded(o, a),
        cfg.alpha_schedule(),
    )?;
    let schedule = cfg.pretrain_schedule();
    let parallel_steps = cfg.pretrain.env_steps.div_ceil(n_env as u64);
    let start = Instant::now();
    let mut curve = Vec::new();
    let mut counters = Counters::default();
    let mut flag = PhaseFlag::default();
    let mut obs = venv.reset_all(&mut env_rng)?;
    let mut step_in_episode = 0;

    for step in 1..=parallel_steps {
        flag.begin(Phase::Collecting)?;
        let actions = agent.act(&obs, ActMode::Stochastic, &mut rng)?;
        let (next, rewards) = venv.step_all(&actions)?;
        step_in_episode += 1;
        let done = step_in_episode == cfg.env.episode_len;
        let end = if done { EndFlag::Truncated } else { EndFlag::None };
        for i in 0..n_env {
            sampler.online.push(&TransitionRecord::from_f64(
                &obs[i * o..(i + 1) * o],
                &actions[i * a..(i + 1) * a],
                rewards[i],
                &next[i * o..(i + 1) * o],
                end,
            ))?;
        }
        counters.env_steps += n_env as u64;
        if done {
            obs = venv.reset_all(&mut env_rng)?;
            step_in_episode = 0;
        } else {
            obs = next;
        }
        flag.end();

        flag.begin(Phase::Updating)?;
        for _ in 0..cfg.pretrain.utd {
            counters.updates += 1;
            let k = counters.updates;
            check_update(agent.update_step(&sampler, &schedule, k, &mut rng), 0, k)?;
        }
        flag.end();

        let every = cfg.pretrain.eval_every;
        if every > 0 && (step % every == 0 || step == parallel_steps) {
            let stats = evaluate_config(&agent, cfg, cfg.env.pretrain_backend)?;
            curve.push(CurvePoint {
                env_steps: counters.env_steps,
                updates: counters.updates,
                mean_return: stats.mean,
                wallclock_s: start.elapsed().as_secs_f64(),
            });
        }
    }

    agent.cfg.explore_noise = cfg.agent.explore_noise;
    let stats = evaluate_config(&agent, cfg, cfg.env.pretrain_backend)?;
    let checkpoint = Checkpoint {
        agent,
        rng,
        counters,
        schedule: cfg.alpha_schedule(),
        config: cfg.clone(),
        eval: Some(EvalRecord {
            backend: cfg.env.pretrain_backend,
            mean_return: stats.mean,
            std_error: stats.std_error,
        }),
    };
    Ok(PretrainOutput {
        checkpoint,
        buffer: sampler.online,
        curve,
    })
}

/// Inputs of one trial: prior trials' buffers, the starting checkpoint and
/// the shared seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialManifest {
    pub buffers: Vec<PathBuf>,
    pub checkpoint: PathBuf,
    pub seed: u64,
    pub trial: u64,
}

impl TrialManifest {
    /// Checks that every referenced file exists and has a valid header.
    pub fn validate(&self) -> Result<(), TrainerError> {
        if !self.checkpoint.exists() {
            return Err(TrainerError::Manifest(format!("checkpoint {} not found", self.checkpoint.display())));
        }
        let bytes = std::fs::read(&self.checkpoint)?;
        checkpoint::sections(&bytes)?;
        for b in &self.buffers {
            if !b.exists() {
                return Err(TrainerError::Manifest(format!("buffer {} not found", b.display())));
            }
            let mut head = [0u8; 8];
            use std::io::Read;
            std::fs::File::open(b)?.read_exact(&mut head).map_err(|_| {
                TrainerError::Manifest(format!("buffer {} is too short", b.display()))
            })?;
            if &head[..4] != replay::MAGIC || u32::from_le_bytes(head[4..8].try_into().unwrap()) != replay::FORMAT_VERSION {
                return Err(TrainerError::Manifest(format!("buffer {} has a bad header", b.display())));
            }
        }
        Ok(())
    }

    /// Merge of the listed buffers, in order.
    pub fn load_buffers(&self, obs_dim: usize, act_dim: usize) -> Result<ReplayBuffer, TrainerError> {
        let loaded = self
            .buffers
            .iter()
            .map(|p| replay::load_expecting(p, obs_dim, act_dim))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&ReplayBuffer> = loaded.iter().collect();
        Ok(ReplayBuffer::merge(obs_dim, act_dim, &refs)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FinetuneOptions {
    /// Stop (as if killed) after this many online episodes.
    pub stop_after: Option<u64>,
    /// Continue from the newest checkpoint in the run directory.
    pub resume: bool,
}

/// What a fine-tuning run produced; the same rows are in the log files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub eval: Vec<EvalRow>,
    pub episodes: Vec<EpisodeRow>,
    pub counters: Counters,
    pub final_hash: u64,
}

/// Fine-tunes from a manifest: restores its checkpoint and, with retention
/// on, merges its buffers into the retained buffer.
pub fn finetune(
    cfg: &ExperimentConfig,
    manifest: &TrialManifest,
    out: &Path,
    opts: FinetuneOptions,
) -> Result<RunSummary, TrainerError> {
    cfg.validate()?;
    manifest.validate()?;
    let ckpt = restore_checkpoint(&manifest.checkpoint)?;
    let (o, a) = (cfg.env.task.obs_dim(), cfg.env.task.act_dim());
    let offline = if cfg.finetune.retention {
        manifest.load_buffers(o, a)?
    } else {
        ReplayBuffer::unbounded(o, a)
    };
    finetune_from(cfg, ckpt, offline, out, opts)
}

/// Fine-tunes from an in-memory checkpoint and retained buffer.
pub fn finetune_from(
    cfg: &ExperimentConfig,
    ckpt: Checkpoint,
    offline: ReplayBuffer,
    out: &Path,
    opts: FinetuneOptions,
) -> Result<RunSummary, TrainerError> {
    cfg.validate()?;
    let paths = RunPaths::new(out);
    paths.create()?;
    std::fs::write(paths.config(), cfg.to_toml())?;

    let (o, a) = (cfg.env.task.obs_dim(), cfg.env.task.act_dim());
    let offline = if cfg.finetune.retention {
        offline
    } else {
        ReplayBuffer::unbounded(o, a)
    };
    let t = cfg.env.episode_len;
    let schedule = cfg.finetune_schedule();
    let n_star = cfg.warmstart_episodes();
    let spec = cfg.env_spec(cfg.env.online_backend);
    let mut env = spec.make();
    let mut flag = PhaseFlag::default();

    let resumed = if opts.resume { paths.latest_checkpoint()? } else { None };
    let (mut agent, mut rng, mut counters, online) = match resumed {
        Some((_, path)) => {
            let c = restore_checkpoint(&path)?;
            let mut online = replay::load_expecting(&paths.online_buffer(), o, a)?;
            let expected = c.counters.env_steps as usize;
            if online.len() < expected {
                return Err(TrainerError::State(format!(
                    "online buffer holds {} transitions, checkpoint expects {expected}",
                    online.len()
                )));
            }
            if online.len() > expected {
                let mut cut = ReplayBuffer::unbounded(o, a);
                for r in online.iter().take(expected) {
                    cut.push(&r)?;
                }
                online = cut;
            }
            logs::truncate_logs(&paths, c.counters.episode)?;
            (c.agent, c.rng, c.counters, online)
        }
        None => {
            for p in [paths.metrics(), paths.episodes(), paths.eval(), paths.qvals()] {
                if p.exists() {
                    std::fs::remove_file(p)?;
                }
            }
            let rng = Rng::from_seed(cfg.seed).derive(ONLINE_STREAM);
            (ckpt.agent, rng, Counters::default(), ReplayBuffer::unbounded(o, a))
        }
    };
    let mut sampler = DualSampler::new(offline, online, cfg.alpha_schedule())?;

    if !counters.warmstart_done {
        let stats = evaluate_config(&agent, cfg, cfg.env.online_backend)?;
        logs::append_csv(
            &paths.eval(),
            logs::EVAL_HEADER,
            &[EvalRow {
                episode: 0,
                mean_return: stats.mean,
                std_error: stats.std_error,
                success_rate: stats.success_rate,
            }],
        )?;
        flag.begin(Phase::Collecting)?;
        let added = warm_start(&agent, env.as_mut(), n_star, t, &mut rng, &mut sampler.online)?;
        flag.end();
        counters.env_steps += added;
        counters.warmstart_done = true;
        let eval = Some(EvalRecord {
            backend: cfg.env.online_backend,
            mean_return: stats.mean,
            std_error: stats.std_error,
        });
        persist(&paths, &agent, &rng, counters, &sampler, cfg, eval)?;
    }

    let total = cfg.finetune.episodes;
    while counters.episode < total {
        if opts.stop_after.is_some_and(|s| counters.episode >= s) {
            break;
        }
        let n = counters.episode;
        let start = Instant::now();

        flag.begin(Phase::Collecting)?;
        let mut log = run_episode(&agent, env.as_mut(), t, ActMode::Stochastic, &mut rng)?;
        log.episode = n + 1;
        for r in log.transitions() {
            sampler.online.push(&r)?;
        }
        counters.env_steps += t;
        flag.end();

        flag.begin(Phase::Updating)?;
        sampler.schedule.episode = n;
        let alpha = sampler.effective_alpha();
        let mut metrics = Vec::with_capacity(schedule.updates as usize);
        for k in 1..=schedule.updates {
            let m = check_update(agent.update_step(&sampler, &schedule, k, &mut rng), n + 1, k)?;
            counters.updates += 1;
            metrics.push(MetricsRow {
                episode: n + 1,
                k,
                critic_loss: m.critic_loss,
                actor_loss: m.actor_loss,
                temperature: m.temperature,
                mean_q: m.mean_q,
            });
        }
        flag.end();

        let stats = evaluate_config(&agent, cfg, cfg.env.online_backend)?;
        counters.episode = n + 1;
        logs::append_csv(&paths.metrics(), logs::METRICS_HEADER, &metrics)?;
        logs::append_csv(
            &paths.episodes(),
            logs::EPISODES_HEADER,
            &[EpisodeRow {
                episode: n + 1,
                ret: log.ret,
                success: log.success as u8,
                alpha,
                wallclock_s: start.elapsed().as_secs_f64(),
            }],
        )?;
        logs::append_csv(
            &paths.eval(),
            logs::EVAL_HEADER,
            &[EvalRow {
                episode: n + 1,
                mean_return: stats.mean,
                std_error: stats.std_error,
                success_rate: stats.success_rate,
            }],
        )?;
        logs::append_jsonl(&paths.qvals(), &[log.qval_record()])?;
        let eval = Some(EvalRecord {
            backend: cfg.env.online_backend,
            mean_return: stats.mean,
            std_error: stats.std_error,
        });
        persist(&paths, &agent, &rng, counters, &sampler, cfg, eval)?;
    }

    Ok(RunSummary {
        dir: out.to_path_buf(),
        eval: logs::read_csv(&paths.eval())?,
        episodes: if paths.episodes().exists() {
            logs::read_csv(&paths.episodes())?
        } else {
            Vec::new()
        },
        counters,
        final_hash: agent.state_hash(),
    })
}

/// Writes the online buffer, then the checkpoint that commits it.
fn persist(
    paths: &RunPaths,
    agent: &Agent<f32>,
    rng: &Rng,
    counters: Counters,
    sampler: &DualSampler,
    cfg: &ExperimentConfig,
    eval: Option<EvalRecord>,
) -> Result<(), TrainerError> {
    replay::save(&sampler.online, &paths.online_buffer())?;
    let ckpt = Checkpoint {
        agent: agent.clone(),
        rng: rng.clone(),
        counters,
        schedule: sampler.schedule,
        config: cfg.clone(),
        eval,
    };
    save_checkpoint(&ckpt, &paths.checkpoint(counters.episode))?;
    Ok(())
}
