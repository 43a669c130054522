//! Run-directory layout and the CSV/JSONL log streams.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::TrainerError;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_HEADER: &str = "episode,k,critic_loss,actor_loss,temperature,mean_q";
pub const EPISODES_HEADER: &str = "episode,return,success,alpha,wallclock_s";
pub const EVAL_HEADER: &str = "episode,mean_return,std_error,success_rate";

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }
    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, episode: u64) -> PathBuf {
        self.checkpoints().join(format!("ep_{episode:04}.ckpt"))
    }
    pub fn buffers(&self) -> PathBuf {
        self.root.join("buffers")
    }
    pub fn online_buffer(&self) -> PathBuf {
        self.buffers().join("online.s2ob")
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn metrics(&self) -> PathBuf {
        self.logs().join("metrics.csv")
    }
    pub fn episodes(&self) -> PathBuf {
        self.logs().join("episodes.csv")
    }
    pub fn qvals(&self) -> PathBuf {
        self.logs().join("qvals.jsonl")
    }
    pub fn eval(&self) -> PathBuf {
        self.logs().join("eval.csv")
    }

    pub fn create(&self) -> Result<(), TrainerError> {
        for d in [self.checkpoints(), self.buffers(), self.logs()] {
            fs::create_dir_all(d)?;
        }
        Ok(())
    }

    /// Highest-numbered checkpoint present, if any.
    pub fn latest_checkpoint(&self) -> Result<Option<(u64, PathBuf)>, TrainerError> {
        let dir = self.checkpoints();
        if !dir.exists() {
            return Ok(None);
        }
        let mut best: Option<(u64, PathBuf)> = None;
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(num) = name.strip_prefix("ep_").and_then(|s| s.strip_suffix(".ckpt")) else {
                continue;
            };
            if let Ok(n) = num.parse::<u64>() {
                if best.as_ref().is_none_or(|(b, _)| n > *b) {
                    best = Some((n, path));
                }
            }
        }
        Ok(best)
    }
}

/// One row of `metrics.csv`; `actor_loss` is empty on critic-only updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub episode: u64,
    pub k: u64,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub temperature: f64,
    pub mean_q: f64,
}

/// One row of `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    #[serde(rename = "return")]
    pub ret: f64,
    pub success: u8,
    pub alpha: f64,
    pub wallclock_s: f64,
}

/// One row of `eval.csv`; episode 0 is the transferred policy before any
/// online update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub episode: u64,
    pub mean_return: f64,
    pub std_error: f64,
    pub success_rate: f64,
}

/// One line of `qvals.jsonl`: per-step rewards and collection-time Q values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvalRecord {
    pub episode: u64,
    pub rewards: Vec<f64>,
    pub q: Vec<f64>,
}

/// Rows carrying an episode index, so logs can be cut back on resume.
pub trait EpisodeIndexed {
    fn episode(&self) -> u64;
}

impl EpisodeIndexed for MetricsRow {
    fn episode(&self) -> u64 {
        self.episode
    }
}
impl EpisodeIndexed for EpisodeRow {
    fn episode(&self) -> u64 {
        self.episode
    }
}
impl EpisodeIndexed for EvalRow {
    fn episode(&self) -> u64 {
        self.episode
    }
}
impl EpisodeIndexed for QvalRecord {
    fn episode(&self) -> u64 {
        self.episode
    }
}

pub fn read_csv<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>, TrainerError> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in rd.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>, TrainerError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Appends rows to a CSV file, writing the header when the file is new.
pub fn append_csv<R: Serialize>(path: &Path, header: &str, rows: &[R]) -> Result<(), TrainerError> {
    let fresh = !path.exists();
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = BufWriter::new(file);
    if fresh {
        writeln!(out, "{header}")?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn append_jsonl<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), TrainerError> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Keeps the lines of `path` whose episode is at most `episode`, byte for
/// byte, so surviving rows are never re-serialized.
fn keep_lines(path: &Path, header: bool, episode: u64, episode_of: impl Fn(&str) -> Option<u64>) -> Result<(), TrainerError> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path)?;
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        let keep = if header && i == 0 {
            true
        } else {
            let e = episode_of(line)
                .ok_or_else(|| TrainerError::State(format!("unreadable row {} in {}", i + 1, path.display())))?;
            e <= episode
        };
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Drops log rows past `episode`, leaving the files as they were when that
/// episode's checkpoint was written.
pub fn truncate_logs(paths: &RunPaths, episode: u64) -> Result<(), TrainerError> {
    let first_column = |line: &str| line.split(',').next().and_then(|v| v.trim().parse().ok());
    for csv in [paths.metrics(), paths.episodes(), paths.eval()] {
        keep_lines(&csv, true, episode, first_column)?;
    }
    #[derive(Deserialize)]
    struct Episode {
        episode: u64,
    }
    keep_lines(&paths.qvals(), false, episode, |line| {
        serde_json::from_str::<Episode>(line).ok().map(|e| e.episode)
    })
}
