//! Critic-error instrumentation: Monte Carlo action values, per-episode
//! error histograms, normalized performance summaries and their CSV export.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::trainer::logs::{self, EvalRow, QvalRecord, RunPaths};
use crate::trainer::TrainerError;

pub const QERR_HIST_HEADER: &str = "episode,bin_lo,bin_hi,count,log_count";
pub const PERF_HEADER: &str = "arm,seeds,mean,std_error,normalized,normalized_std_error";
pub const CURVES_HEADER: &str = "arm,seed,episode,mean_return";
pub const DEFAULT_BINS: usize = 101;
pub const DEFAULT_RANGE: (f64, f64) = (-50.0, 50.0);

#[derive(Debug, thiserror::Error)]
pub enum DiagError {
    #[error("length mismatch: {q} critic values for {rewards} rewards")]
    Length { q: usize, rewards: usize },
    #[error("invalid histogram: {0}")]
    Histogram(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("best terminal mean {0} is not positive; normalization undefined")]
    NonPositiveBest(f64),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Discounted reward-to-go from every step, with no bootstrap past the end.
pub fn mc_action_values(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Bound on what the missing tail contributes at step `t` of a `len`-step
/// episode when rewards are bounded by `r_max` in magnitude.
pub fn truncation_bias_bound(t: usize, len: usize, gamma: f64, r_max: f64) -> f64 {
    gamma.powi((len - t) as i32) * r_max / (1.0 - gamma)
}

/// `Q_phi - Q_MC` per step.
pub fn q_errors(q: &[f64], rewards: &[f64], gamma: f64) -> Result<Vec<f64>, DiagError> {
    if q.len() != rewards.len() {
        return Err(DiagError::Length {
            q: q.len(),
            rewards: rewards.len(),
        });
    }
    Ok(q.iter().zip(mc_action_values(rewards, gamma)).map(|(a, b)| a - b).collect())
}

/// Fixed-edge histograms of the critic error, one row per episode.
#[derive(Debug, Clone, PartialEq)]
pub struct QErrorSeries {
    pub episodes: Vec<u64>,
    /// `bins + 1` strictly increasing edges.
    pub edges: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
}

impl QErrorSeries {
    pub fn bins(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn log_counts(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| row.iter().map(|&c| (c as f64).ln_1p()).collect())
            .collect()
    }
}

/// Histograms each episode's errors over `bins` equal bins on `range`;
/// values outside the range land in the end bins.
pub fn histogram_series(
    episodes: &[u64],
    series: &[Vec<f64>],
    bins: usize,
    range: (f64, f64),
) -> Result<QErrorSeries, DiagError> {
    let (lo, hi) = range;
    if bins == 0 || !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(DiagError::Histogram(format!("{bins} bins over [{lo}, {hi}]")));
    }
    if episodes.len() != series.len() {
        return Err(DiagError::Histogram(format!(
            "{} episode labels for {} series",
            episodes.len(),
            series.len()
        )));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let counts = series
        .iter()
        .map(|values| {
            let mut row = vec![0u64; bins];
            for &v in values {
                let idx = if v.is_nan() {
                    continue;
                } else {
                    (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
                };
                row[idx] += 1;
            }
            row
        })
        .collect();
    Ok(QErrorSeries {
        episodes: episodes.to_vec(),
        edges,
        counts,
    })
}

/// Per-arm terminal performance, normalized by the best arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmPerf {
    pub arm: String,
    pub seeds: usize,
    pub mean: f64,
    pub std_error: f64,
    pub normalized: f64,
    pub normalized_std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfSummary {
    pub arms: Vec<ArmPerf>,
    /// Best terminal mean across arms.
    pub best: f64,
}

/// Terminal mean and standard error of each arm's per-seed series, divided
/// by the largest terminal mean.
pub fn normalized_performance(arms: &[(String, Vec<Vec<f64>>)]) -> Result<PerfSummary, DiagError> {
    if arms.is_empty() {
        return Err(DiagError::Empty("no arms"));
    }
    let mut stats = Vec::with_capacity(arms.len());
    for (name, seeds) in arms {
        let terminal: Vec<f64> = seeds
            .iter()
            .map(|s| s.last().copied().ok_or(DiagError::Empty("empty seed series")))
            .collect::<Result<_, _>>()?;
        if terminal.is_empty() {
            return Err(DiagError::Empty("arm without seeds"));
        }
        let (mean, se) = crate::trainer::mean_and_std_error(&terminal);
        stats.push((name.clone(), terminal.len(), mean, se));
    }
    let best = stats.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
    if best <= 0.0 {
        return Err(DiagError::NonPositiveBest(best));
    }
    Ok(PerfSummary {
        arms: stats
            .into_iter()
            .map(|(arm, seeds, mean, std_error)| ArmPerf {
                arm,
                seeds,
                mean,
                std_error,
                normalized: mean / best,
                normalized_std_error: std_error / best,
            })
            .collect(),
        best,
    })
}

/// One row of `qerr_hist.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistRow {
    pub episode: u64,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub log_count: f64,
}

/// One row of `curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub arm: String,
    pub seed: u64,
    pub episode: u64,
    pub mean_return: f64,
}

pub fn hist_rows(series: &QErrorSeries) -> Vec<HistRow> {
    let mut rows = Vec::with_capacity(series.counts.len() * series.bins());
    for (e, row) in series.episodes.iter().zip(&series.counts) {
        for (b, &count) in row.iter().enumerate() {
            rows.push(HistRow {
                episode: *e,
                bin_lo: series.edges[b],
                bin_hi: series.edges[b + 1],
                count,
                log_count: (count as f64).ln_1p(),
            });
        }
    }
    rows
}

/// Whatever is available for export; absent parts produce no file.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub histogram: Option<QErrorSeries>,
    pub perf: Option<PerfSummary>,
    pub curves: Vec<CurveRow>,
}

fn write_csv<R: Serialize>(path: &Path, header: &str, rows: &[R]) -> Result<(), DiagError> {
    let mut bytes = Vec::new();
    writeln!(bytes, "{header}")?;
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut bytes);
        for r in rows {
            w.serialize(r).map_err(TrainerError::from)?;
        }
        w.flush()?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Writes `qerr_hist.csv`, `perf.csv` and `curves.csv` into `dir`,
/// replacing earlier exports.
pub fn export(artifacts: &Artifacts, dir: &Path) -> Result<(), DiagError> {
    fs::create_dir_all(dir)?;
    if let Some(h) = &artifacts.histogram {
        write_csv(&dir.join("qerr_hist.csv"), QERR_HIST_HEADER, &hist_rows(h))?;
    }
    if let Some(p) = &artifacts.perf {
        write_csv(&dir.join("perf.csv"), PERF_HEADER, &p.arms)?;
    }
    if !artifacts.curves.is_empty() {
        write_csv(&dir.join("curves.csv"), CURVES_HEADER, &artifacts.curves)?;
    }
    Ok(())
}

/// Critic errors of every logged episode of a run.
pub fn run_errors(dir: &Path, gamma: f64) -> Result<(Vec<u64>, Vec<Vec<f64>>), DiagError> {
    let records: Vec<QvalRecord> = logs::read_jsonl(&RunPaths::new(dir).qvals())?;
    let mut episodes = Vec::with_capacity(records.len());
    let mut errors = Vec::with_capacity(records.len());
    for r in records {
        errors.push(q_errors(&r.q, &r.rewards, gamma)?);
        episodes.push(r.episode);
    }
    Ok((episodes, errors))
}

/// Evaluation curve of a run as `curves.csv` rows.
pub fn run_curve(dir: &Path, arm: &str, seed: u64) -> Result<Vec<CurveRow>, DiagError> {
    let rows: Vec<EvalRow> = logs::read_csv(&RunPaths::new(dir).eval())?;
    Ok(rows
        .into_iter()
        .map(|r| CurveRow {
            arm: arm.to_string(),
            seed,
            episode: r.episode,
            mean_return: r.mean_return,
        })
        .collect())
}

/// Histogram and curve export for one run directory, written next to its logs.
pub fn diagnose(dir: &Path, gamma: f64, arm: &str, seed: u64) -> Result<Artifacts, DiagError> {
    let (episodes, errors) = run_errors(dir, gamma)?;
    let artifacts = Artifacts {
        histogram: Some(histogram_series(&episodes, &errors, DEFAULT_BINS, DEFAULT_RANGE)?),
        perf: None,
        curves: run_curve(dir, arm, seed)?,
    };
    export(&artifacts, &RunPaths::new(dir).logs())?;
    Ok(artifacts)
}

/// Median of `|values|`; `None` when empty.
pub fn median_abs(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().map(|x| x.abs()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
