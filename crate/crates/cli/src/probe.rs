//! Empirical complexity probe: short trainings at several values of one
//! cost-model variable, with a log-log fit of the dominant counter.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use uavtwin::ppo::train;
use uavtwin::probe::ProbeSnapshot;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variable {
    /// Episodes.
    E,
    /// Steps per episode.
    T,
    /// Receivers.
    R,
    /// Hidden-layer width.
    W,
}

impl FromStr for Variable {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E" | "e" => Ok(Self::E),
            "T" | "t" => Ok(Self::T),
            "R" | "r" => Ok(Self::R),
            "W" | "w" => Ok(Self::W),
            _ => Err(CliError::Config(format!("probe variable `{s}` is not one of E, T, R, W"))),
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::E => "E",
            Self::T => "T",
            Self::R => "R",
            Self::W => "W",
        })
    }
}

impl Variable {
    /// Counter whose growth the variable should drive.
    pub fn counter(self) -> &'static str {
        match self {
            Self::W => "mlp_macs",
            _ => "candidate_paths",
        }
    }

    fn read(self, s: &ProbeSnapshot) -> u64 {
        match self {
            Self::W => s.mlp_macs,
            _ => s.candidate_paths,
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: usize) -> Result<()> {
        match self {
            Self::E => cfg.ppo.episodes = value,
            Self::T => cfg.env.episode_length = value,
            Self::W => cfg.ppo.width = value,
            Self::R => {
                if cfg.scene_file.is_some() {
                    return Err(CliError::Config("probing R needs a generated scene, not scene_file".into()));
                }
                cfg.scene.n_receivers = value;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub value: usize,
    pub counters: ProbeSnapshot,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub variable: Variable,
    pub counter: &'static str,
    pub rows: Vec<ProbeRow>,
    /// Least-squares slope of ln(counter) against ln(value).
    pub slope: f64,
}

impl ProbeReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path.display(), e))?;
        w.write_record([
            "variable",
            "value",
            "candidate_paths",
            "box_tests",
            "mlp_macs",
            "env_steps",
            "transitions",
            "transition_scalars",
            "peak_episode_scalars",
        ])
        .map_err(|e| CliError::io(path.display(), e))?;
        for r in &self.rows {
            let c = &r.counters;
            let mut rec = vec![self.variable.to_string(), r.value.to_string()];
            rec.extend(
                [
                    c.candidate_paths,
                    c.box_tests,
                    c.mlp_macs,
                    c.env_steps,
                    c.transitions,
                    c.transition_scalars,
                    c.peak_episode_scalars,
                ]
                .map(|v| v.to_string()),
            );
            w.write_record(&rec).map_err(|e| CliError::io(path.display(), e))?;
        }
        w.flush().map_err(|e| CliError::io(path.display(), e))
    }
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn loglog_slope(values: &[usize], counts: &[u64]) -> f64 {
    let xs: Vec<f64> = values.iter().map(|&v| (v as f64).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    fit_slope(&xs, &ys)
}

/// Trains once per value with fresh counters and fits the slope.
pub fn run_probe(base: &RunConfig, variable: Variable, values: &[usize]) -> Result<ProbeReport> {
    if values.len() < 3 {
        return Err(CliError::Config(format!("probe needs >= 3 values (got {})", values.len())));
    }
    if values.iter().any(|&v| v < 1) {
        return Err(CliError::Config("probe values must be >= 1".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = base.clone();
        variable.apply(&mut cfg, value)?;
        let env = cfg.build_env()?;
        train(&env, &cfg.ppo_params(), |_| {}).map_err(|e| CliError::Runtime(e.to_string()))?;
        rows.push(ProbeRow {
            value,
            counters: env.probe().snapshot(),
        });
    }
    let counts: Vec<u64> = rows.iter().map(|r| variable.read(&r.counters)).collect();
    if counts.contains(&0) {
        return Err(CliError::Runtime(format!("{} counter stayed at zero", variable.counter())));
    }
    Ok(ProbeReport {
        variable,
        counter: variable.counter(),
        slope: loglog_slope(values, &counts),
        rows,
    })
}
