//! Command-line driver: one subcommand per experiment, each run isolated in
//! its own directory with the resolved configuration echoed first.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use s2o_core::diagnostics;
use s2o_core::replay;
use s2o_core::trainer::{
    self, evaluate, finetune, pretrain, restore_checkpoint, save_checkpoint, warm_start, ExperimentConfig,
    FinetuneOptions, RunPaths, TrialManifest,
};

#[derive(Debug, Parser)]
#[command(name = "s2o", version, about = "Simulation-to-online actor-critic experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Configuration sources shared by every subcommand, applied in order:
/// file, then the named flags, then `--set` pairs.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML experiment file; missing keys take documented defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Online backend (kinematic or dynamic).
    #[arg(long)]
    pub backend: Option<String>,
    /// Actor period during fine-tuning; a comma list for `ablate asymmetric`.
    #[arg(long = "M", value_delimiter = ',')]
    pub m: Vec<u64>,
    /// Initial mixture weight; a comma list for `ablate alpha`.
    #[arg(long, value_delimiter = ',')]
    pub alpha0: Vec<f64>,
    /// Updates per parallel pretraining step.
    #[arg(long)]
    pub utd: Option<u64>,
    #[arg(long = "warmstart-episodes")]
    pub warmstart_episodes: Option<u64>,
    /// Comma-separated buffers retained as D0.
    #[arg(long)]
    pub retain: Option<String>,
    /// sac or td3.
    #[arg(long)]
    pub algo: Option<String>,
    /// Any other field as dotted `key=value`, e.g. `finetune.episodes=10`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    /// Overrides as (key, literal) pairs in application order.
    pub fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut out = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        if let Some(v) = self.seed {
            push("seed", v.to_string());
        }
        if let Some(v) = &self.backend {
            push("backend", format!("{v:?}"));
        }
        match self.m.as_slice() {
            [] => {}
            [v] => push("M", v.to_string()),
            _ => bail!("--M takes a list only with `ablate asymmetric`"),
        }
        match self.alpha0.as_slice() {
            [] => {}
            [v] => push("alpha0", format!("{v:?}")),
            _ => bail!("--alpha0 takes a list only with `ablate alpha`"),
        }
        if let Some(v) = self.utd {
            push("utd", v.to_string());
        }
        if let Some(v) = self.warmstart_episodes {
            push("warmstart-episodes", v.to_string());
        }
        if let Some(v) = &self.retain {
            push("retain", v.clone());
        }
        if let Some(v) = &self.algo {
            push("algo", format!("{v:?}"));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain on the prior backend; writes a checkpoint and the simulation buffer.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fine-tune a checkpoint on the online backend.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        /// Trial index recorded in the manifest.
        #[arg(long, default_value_t = 0)]
        trial: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Collect warm-start episodes with the frozen policy; no updates.
    Warmstart {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Sweeps and stabilizer ablations.
    Ablate {
        #[command(subcommand)]
        which: Ablation,
    },
    /// Critic-error histograms and curves for a run directory.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        /// Discount for the Monte Carlo values; defaults to the run's.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Deterministic evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<u64>,
        /// Where to echo the configuration; nothing is written without it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the resolved configuration as TOML.
    Config {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Runs executed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Subcommand)]
pub enum Ablation {
    /// Actor period sweep.
    /// Periods come from `--M` (default 1,5,10,20).
    Asymmetric {
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Initial mixture weight sweep.
    /// Values come from `--alpha0` (default 0.1,0.5,0.9).
    Alpha {
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Chained trials, each retaining every earlier trial's online buffer.
    Retention {
        #[arg(long, default_value_t = 4)]
        trials: u64,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Pretraining update-ratio sweep.
    Utd {
        #[arg(long = "eta", value_delimiter = ',', default_value = "4,8,16,32,48,64,96,128")]
        etas: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Simulation buffer as D0 without warm start, against the online-only baseline.
    Simdata {
        /// Buffer written by `pretrain`.
        #[arg(long)]
        sim_buffer: PathBuf,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

/// Configuration from an optional file (or `base`) plus overrides, validated.
pub fn parse_config(path: Option<&Path>, base: Option<ExperimentConfig>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => base.unwrap_or_default(),
    };
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve(args: &ConfigArgs, checkpoint: Option<&Path>) -> Result<ExperimentConfig> {
    let base = match (&args.config, checkpoint) {
        (None, Some(c)) => Some(restore_checkpoint(c)?.config),
        _ => None,
    };
    parse_config(args.config.as_deref(), base, &args.overrides()?)
}

fn echo(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(trainer::logs::CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn manifest(cfg: &ExperimentConfig, checkpoint: &Path, trial: u64) -> TrialManifest {
    TrialManifest {
        buffers: cfg.finetune.retain.clone(),
        checkpoint: checkpoint.to_path_buf(),
        seed: cfg.seed,
        trial,
    }
}

/// Runs jobs with at most `jobs` at a time, returning the first error.
fn run_parallel(jobs: usize, tasks: Vec<Box<dyn FnOnce() -> Result<()> + Send>>) -> Result<()> {
    let jobs = jobs.max(1);
    let mut tasks = tasks.into_iter();
    loop {
        let chunk: Vec<_> = tasks.by_ref().take(jobs).collect();
        if chunk.is_empty() {
            return Ok(());
        }
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = chunk.into_iter().map(|t| s.spawn(t)).collect();
            for h in handles {
                h.join().map_err(|_| anyhow::anyhow!("run panicked"))??;
            }
            Ok(())
        })?;
    }
}

fn finetune_task(cfg: ExperimentConfig, m: TrialManifest, out: PathBuf) -> Box<dyn FnOnce() -> Result<()> + Send> {
    Box::new(move || {
        echo(&cfg, &out)?;
        finetune(&cfg, &m, &out, FinetuneOptions::default())?;
        Ok(())
    })
}

pub fn write_curve(path: &Path, curve: &[trainer::CurvePoint]) -> Result<()> {
    let mut text = String::from("env_steps,updates,mean_return,wallclock_s\n");
    for p in curve {
        text.push_str(&format!("{},{},{},{}\n", p.env_steps, p.updates, p.mean_return, p.wallclock_s));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { out, cfg } => {
            let cfg = resolve(&cfg, None)?;
            echo(&cfg, &out)?;
            let result = pretrain(&cfg)?;
            save_checkpoint(&result.checkpoint, &out.join("pretrain.ckpt"))?;
            replay::save(&result.buffer, &out.join("sim.s2ob"))?;
            write_curve(&out.join("curve.csv"), &result.curve)?;
            if let Some(e) = result.checkpoint.eval {
                println!("pretrain evaluation on {}: {:.3} +- {:.3}", e.backend, e.mean_return, e.std_error);
            }
        }
        Command::Finetune {
            checkpoint,
            out,
            resume,
            trial,
            cfg,
        } => {
            let cfg = resolve(&cfg, Some(&checkpoint))?;
            echo(&cfg, &out)?;
            let opts = FinetuneOptions { stop_after: None, resume };
            let summary = finetune(&cfg, &manifest(&cfg, &checkpoint, trial), &out, opts)?;
            if let Some(last) = summary.eval.last() {
                println!("episode {}: evaluation {:.3} +- {:.3}", last.episode, last.mean_return, last.std_error);
            }
        }
        Command::Warmstart { checkpoint, out, cfg } => {
            let cfg = resolve(&cfg, Some(&checkpoint))?;
            echo(&cfg, &out)?;
            let ckpt = restore_checkpoint(&checkpoint)?;
            let paths = RunPaths::new(&out);
            paths.create()?;
            let mut env = cfg.env_spec(cfg.env.online_backend).make();
            let (o, a) = (cfg.env.task.obs_dim(), cfg.env.task.act_dim());
            let mut buffer = replay::ReplayBuffer::unbounded(o, a);
            let mut rng = s2o_core::diffcore::Rng::from_seed(cfg.seed);
            let added = warm_start(
                &ckpt.agent,
                env.as_mut(),
                cfg.finetune.warmstart_episodes,
                cfg.env.episode_len,
                &mut rng,
                &mut buffer,
            )?;
            replay::save(&buffer, &paths.online_buffer())?;
            println!("collected {added} transitions");
        }
        Command::Ablate { which } => ablate(which)?,
        Command::Config { cfg } => print!("{}", resolve(&cfg, None)?.to_toml()),
        Command::Diagnose { run, gamma } => {
            let cfg = ExperimentConfig::load(&RunPaths::new(&run).config())?;
            let gamma = gamma.unwrap_or(cfg.agent.gamma);
            let arm = run.file_name().and_then(|n| n.to_str()).unwrap_or("run").to_string();
            let a = diagnostics::diagnose(&run, gamma, &arm, cfg.seed)?;
            let episodes = a.histogram.map(|h| h.episodes.len()).unwrap_or(0);
            println!("wrote diagnostics for {episodes} episodes");
        }
        Command::Eval {
            checkpoint,
            episodes,
            out,
            cfg,
        } => {
            let cfg = resolve(&cfg, Some(&checkpoint))?;
            if let Some(dir) = &out {
                echo(&cfg, dir)?;
            }
            let ckpt = restore_checkpoint(&checkpoint)?;
            let e = episodes.unwrap_or(cfg.finetune.eval_episodes);
            let stats = evaluate(
                &ckpt.agent,
                &cfg.env_spec(cfg.env.online_backend),
                cfg.env.episode_len,
                e,
                &mut trainer::eval_stream(cfg.seed),
            )?;
            println!(
                "{} episodes on {}: mean {:.3} std_error {:.3} success {:.2}",
                e, cfg.env.online_backend, stats.mean, stats.std_error, stats.success_rate
            );
        }
    }
    Ok(())
}

fn ablate(which: Ablation) -> Result<()> {
    match which {
        Ablation::Asymmetric { mut sweep } => {
            let periods = match std::mem::take(&mut sweep.cfg.m) {
                v if v.is_empty() => vec![1, 5, 10, 20],
                v => v,
            };
            let base = resolve(&sweep.cfg, Some(&sweep.checkpoint))?;
            echo(&base, &sweep.out)?;
            let mut tasks = Vec::new();
            for m in periods {
                let mut cfg = base.clone();
                cfg.set("M", &m.to_string())?;
                let man = manifest(&cfg, &sweep.checkpoint, 0);
                tasks.push(finetune_task(cfg, man, sweep.out.join(format!("M{m}"))));
            }
            run_parallel(sweep.jobs, tasks)
        }
        Ablation::Alpha { mut sweep } => {
            let values = match std::mem::take(&mut sweep.cfg.alpha0) {
                v if v.is_empty() => vec![0.1, 0.5, 0.9],
                v => v,
            };
            let base = resolve(&sweep.cfg, Some(&sweep.checkpoint))?;
            echo(&base, &sweep.out)?;
            let mut tasks = Vec::new();
            for a in values {
                let mut cfg = base.clone();
                cfg.set("alpha0", &format!("{a:?}"))?;
                let man = manifest(&cfg, &sweep.checkpoint, 0);
                tasks.push(finetune_task(cfg, man, sweep.out.join(format!("alpha{a}"))));
            }
            run_parallel(sweep.jobs, tasks)
        }
        Ablation::Retention { trials, sweep } => {
            let cfg = resolve(&sweep.cfg, Some(&sweep.checkpoint))?;
            echo(&cfg, &sweep.out)?;
            let mut previous: Vec<PathBuf> = Vec::new();
            for trial in 0..trials {
                let dir = sweep.out.join(format!("trial{trial}"));
                let mut m = manifest(&cfg, &sweep.checkpoint, trial);
                m.buffers = previous.clone();
                finetune_task(cfg.clone(), m, dir.clone())()?;
                previous.push(RunPaths::new(&dir).online_buffer());
            }
            Ok(())
        }
        Ablation::Utd { etas, out, jobs, cfg } => {
            let base = resolve(&cfg, None)?;
            echo(&base, &out)?;
            let mut tasks: Vec<Box<dyn FnOnce() -> Result<()> + Send>> = Vec::new();
            for eta in etas {
                let mut cfg = base.clone();
                cfg.set("utd", &eta.to_string())?;
                if cfg.pretrain.eval_every == 0 {
                    cfg.pretrain.eval_every = 10;
                }
                let dir = out.join(format!("eta{eta}"));
                tasks.push(Box::new(move || {
                    echo(&cfg, &dir)?;
                    let r = pretrain(&cfg)?;
                    write_curve(&dir.join("curve.csv"), &r.curve)
                }));
            }
            run_parallel(jobs, tasks)
        }
        Ablation::Simdata { sim_buffer, sweep } => {
            let mut base = resolve(&sweep.cfg, Some(&sweep.checkpoint))?;
            base.finetune.warmstart = false;
            echo(&base, &sweep.out)?;
            if !sim_buffer.exists() {
                bail!("simulation buffer {} not found", sim_buffer.display());
            }
            let mut with = base.clone();
            with.finetune.retention = true;
            let mut m = manifest(&with, &sweep.checkpoint, 0);
            m.buffers = vec![sim_buffer];
            let mut without = base;
            without.finetune.retention = false;
            let m0 = manifest(&without, &sweep.checkpoint, 0);
            run_parallel(
                sweep.jobs,
                vec![
                    finetune_task(with, m, sweep.out.join("simdata")),
                    finetune_task(without, m0, sweep.out.join("baseline")),
                ],
            )
        }
    }
}
