//! Grid sweeps over training configurations: a base config plus value
//! lists for reward variant, auto-encoder hidden size, demo noise, and
//! seed. Every combination is trained in a fixed order, each cell in its
//! own run directory, and a summary table aggregates final scaled
//! rewards across seeds.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use crate::config::TrainConfig;
use crate::reward::RewardKind;
use crate::trainer::train;
use crate::{Error, Result};

/// A base configuration plus one value list per swept axis. Axes default
/// to the base config's single value, so a grid with no `sweep_` keys is
/// exactly one training run.
#[derive(Debug, Clone)]
pub struct SweepGrid {
    pub base: TrainConfig,
    pub rewards: Vec<RewardKind>,
    pub ae_hiddens: Vec<usize>,
    pub noise_sigmas: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// What happened in one grid cell.
#[derive(Debug, Clone)]
pub struct CellReport {
    pub run_id: String,
    pub reward: RewardKind,
    pub ae_hidden: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Final scaled reward on success (absent for zero-iteration runs),
    /// or the error text on failure.
    pub outcome: std::result::Result<Option<f64>, String>,
}

/// Results of a whole sweep. `any_failed` is true when at least one cell
/// errored; the remaining cells still ran.
#[derive(Debug)]
pub struct SweepReport {
    pub cells: Vec<CellReport>,
    pub any_failed: bool,
    pub summary_path: PathBuf,
}

impl SweepGrid {
    /// Parses a grid file: the usual training keys plus optional
    /// `sweep_reward`, `sweep_ae_hidden`, `sweep_noise_sigma`, and
    /// `sweep_seed` comma lists. Swept keys override their base
    /// counterparts.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base_lines = String::new();
        let mut rewards: Option<Vec<RewardKind>> = None;
        let mut ae_hiddens: Option<Vec<usize>> = None;
        let mut noise_sigmas: Option<Vec<f64>> = None;
        let mut seeds: Option<Vec<u64>> = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let key = line.split_once('=').map(|(k, _)| k.trim());
            let sweep_key = match key {
                Some(k) if k.starts_with("sweep_") => k.to_string(),
                _ => {
                    base_lines.push_str(raw);
                    base_lines.push('\n');
                    continue;
                }
            };
            let list = line.split_once('=').expect("checked above").1.trim();
            let dup = |name: &str| Error::Config(format!("duplicate key {name:?}"));
            match sweep_key.as_str() {
                "sweep_reward" => {
                    let v = parse_list(&sweep_key, list, RewardKind::parse)?;
                    if rewards.replace(v).is_some() {
                        return Err(dup(&sweep_key));
                    }
                }
                "sweep_ae_hidden" => {
                    let v = parse_list(&sweep_key, list, |s| {
                        s.parse().map_err(|_| {
                            Error::Config(format!("invalid value for sweep_ae_hidden: {s:?}"))
                        })
                    })?;
                    if ae_hiddens.replace(v).is_some() {
                        return Err(dup(&sweep_key));
                    }
                }
                "sweep_noise_sigma" => {
                    let v = parse_list(&sweep_key, list, |s| {
                        s.parse().map_err(|_| {
                            Error::Config(format!("invalid value for sweep_noise_sigma: {s:?}"))
                        })
                    })?;
                    if noise_sigmas.replace(v).is_some() {
                        return Err(dup(&sweep_key));
                    }
                }
                "sweep_seed" => {
                    let v = parse_list(&sweep_key, list, |s| {
                        s.parse().map_err(|_| {
                            Error::Config(format!("invalid value for sweep_seed: {s:?}"))
                        })
                    })?;
                    if seeds.replace(v).is_some() {
                        return Err(dup(&sweep_key));
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown sweep key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }

        let base = TrainConfig::parse(&base_lines)?;
        Ok(SweepGrid {
            rewards: rewards.unwrap_or_else(|| vec![base.reward]),
            ae_hiddens: ae_hiddens.unwrap_or_else(|| vec![base.ae_hidden]),
            noise_sigmas: noise_sigmas.unwrap_or_else(|| vec![base.noise_sigma]),
            seeds: seeds.unwrap_or_else(|| vec![base.seed]),
            base,
        })
    }

    /// Cell configurations in execution order: reward, then hidden size,
    /// then noise, then seed, each axis in its listed order.
    pub fn cells(&self) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &reward in &self.rewards {
            for &ae_hidden in &self.ae_hiddens {
                for &noise_sigma in &self.noise_sigmas {
                    for &seed in &self.seeds {
                        let mut cfg = self.base.clone();
                        cfg.reward = reward;
                        cfg.ae_hidden = ae_hidden;
                        cfg.noise_sigma = noise_sigma;
                        cfg.seed = seed;
                        out.push(cfg);
                    }
                }
            }
        }
        out
    }
}

fn parse_list<T>(key: &str, list: &str, parse_one: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<&str> = list.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("{key} must be a non-empty comma list, got {list:?}")));
    }
    items.into_iter().map(parse_one).collect()
}

/// Runs every cell of the grid, one after another. A failing cell is
/// recorded and the sweep moves on. Afterwards `summary.csv` in the base
/// out_dir holds one row per (reward, hidden, noise) group with the mean
/// and population standard deviation of final scaled rewards over seeds.
pub fn run_sweep(grid: &SweepGrid) -> Result<SweepReport> {
    let mut cells = Vec::new();
    for cfg in grid.cells() {
        let outcome = match cfg.validate().and_then(|()| train(&cfg)) {
            Ok(done) => Ok(done.final_eval.map(|e| e.scaled_reward)),
            Err(e) => Err(e.to_string()),
        };
        cells.push(CellReport {
            run_id: cfg.run_id(),
            reward: cfg.reward,
            ae_hidden: cfg.ae_hidden,
            noise_sigma: cfg.noise_sigma,
            seed: cfg.seed,
            outcome,
        });
    }

    let summary_path = grid.base.out_dir.join("summary.csv");
    std::fs::create_dir_all(&grid.base.out_dir)?;
    let mut w = BufWriter::new(File::create(&summary_path)?);
    writeln!(w, "reward,ae_hidden,noise_sigma,seeds,scaled_reward_mean,scaled_reward_std")?;

    let mut groups: Vec<(RewardKind, usize, f64)> = Vec::new();
    for c in &cells {
        let key = (c.reward, c.ae_hidden, c.noise_sigma);
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups.sort_by(|a, b| {
        (a.0.as_str(), a.1)
            .cmp(&(b.0.as_str(), b.1))
            .then(a.2.total_cmp(&b.2))
    });

    for (reward, hidden, noise) in groups {
        let vals: Vec<f64> = cells
            .iter()
            .filter(|c| (c.reward, c.ae_hidden, c.noise_sigma) == (reward, hidden, noise))
            .filter_map(|c| c.outcome.as_ref().ok().copied().flatten())
            .collect();
        let (n, mean, std) = if vals.is_empty() {
            (0, String::new(), String::new())
        } else {
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
            (vals.len(), format!("{m}"), format!("{}", var.sqrt()))
        };
        writeln!(w, "{reward},{hidden},{noise},{n},{mean},{std}")?;
    }
    w.flush()?;

    let any_failed = cells.iter().any(|c| c.outcome.is_err());
    Ok(SweepReport { cells, any_failed, summary_path })
}
