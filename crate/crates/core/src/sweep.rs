//! Window sweeps: per-prefix truncation statistics over a window grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{Scratch, SyntheticSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Tv,
    Kl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    Mean,
    Median,
}

/// Truncation protocol. A synthetic source has no positional encoding, so the
/// two protocols coincide there; they differ only for ingested model logs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Fresh,
    PositionPreserving,
}

/// Statistic values per (prefix, window).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationCurve {
    grid: Vec<usize>,
    per_prefix: Vec<Vec<f64>>,
    pub statistic: Statistic,
    pub aggregate: Aggregate,
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl TruncationCurve {
    pub fn new(grid: Vec<usize>, per_prefix: Vec<Vec<f64>>, statistic: Statistic, aggregate: Aggregate) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Empty("window grid".into()));
        }
        if grid.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidParam("grid must be strictly increasing".into()));
        }
        if per_prefix.is_empty() {
            return Err(Error::Empty("no prefixes".into()));
        }
        for row in &per_prefix {
            if row.len() != grid.len() {
                return Err(Error::DimensionMismatch { left: row.len(), right: grid.len() });
            }
            if let Some(v) = row.iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::InvalidParam(format!("negative or NaN statistic {v}")));
            }
        }
        Ok(Self { grid, per_prefix, statistic, aggregate })
    }

    /// A curve holding only aggregate values, as one pseudo-prefix.
    pub fn from_aggregates(grid: Vec<usize>, values: Vec<f64>, statistic: Statistic, aggregate: Aggregate) -> Result<Self> {
        Self::new(grid, vec![values], statistic, aggregate)
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn per_prefix(&self) -> &[Vec<f64>] {
        &self.per_prefix
    }

    pub fn n_prefixes(&self) -> usize {
        self.per_prefix.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.per_prefix.iter().map(|r| r[j]).collect()
    }

    pub fn aggregate_values(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|j| {
                let c = self.column(j);
                match self.aggregate {
                    Aggregate::Mean => mean(&c),
                    Aggregate::Median => median(&c),
                }
            })
            .collect()
    }

    pub fn with_aggregate(mut self, aggregate: Aggregate) -> Self {
        self.aggregate = aggregate;
        self
    }

    /// Curve built from the listed prefix rows (repeats allowed).
    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            per_prefix: idx.iter().map(|&i| self.per_prefix[i].clone()).collect(),
            statistic: self.statistic,
            aggregate: self.aggregate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub grid: Vec<usize>,
    pub n_prefixes: usize,
    pub prefix_len: usize,
    pub statistic: Statistic,
    pub aggregate: Aggregate,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    #[serde(default)]
    pub seed: u64,
}

fn default_protocol() -> Protocol {
    Protocol::PositionPreserving
}

impl SweepConfig {
    pub fn new(grid: Vec<usize>, n_prefixes: usize, prefix_len: usize, statistic: Statistic) -> Self {
        let aggregate = match statistic {
            Statistic::Tv => Aggregate::Mean,
            Statistic::Kl => Aggregate::Median,
        };
        Self { grid, n_prefixes, prefix_len, statistic, aggregate, protocol: Protocol::PositionPreserving, seed: 0 }
    }
}

/// Rejects grids reaching the prefix length and warns above half of it.
pub fn check_grid(grid: &[usize], prefix_len: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Empty("window grid".into()));
    }
    if grid.contains(&0) {
        return Err(Error::InvalidParam("windows must be at least 1".into()));
    }
    let max = *grid.iter().max().unwrap();
    if max >= prefix_len {
        return Err(Error::Precondition(format!(
            "window {max} does not fit a prefix of {prefix_len} tokens; keep the window at most about 50% of the prefix"
        )));
    }
    if 2 * max > prefix_len {
        log::warn!("window {max} exceeds 50% of the prefix length {prefix_len}; long-window values are unreliable");
    }
    Ok(())
}

/// Exact per-prefix truncation statistics on a synthetic source. The
/// statistic is taken for the token that follows each sampled prefix.
pub fn sweep(src: &SyntheticSource, cfg: &SweepConfig) -> Result<TruncationCurve> {
    check_grid(&cfg.grid, cfg.prefix_len)?;
    if cfg.n_prefixes == 0 {
        return Err(Error::Empty("n_prefixes = 0".into()));
    }
    let rows: Vec<Vec<f64>> = (0..cfg.n_prefixes)
        .into_par_iter()
        .map_init(Scratch::new, |scratch, i| {
            let h = src.sample_prefix(cfg.prefix_len, cfg.seed.wrapping_add(i as u64));
            match cfg.statistic {
                Statistic::Tv => src.window_tv_profile(&h, &cfg.grid, scratch),
                Statistic::Kl => Ok(src.window_divergences(&h, &cfg.grid, None, scratch)?.iter().map(|x| x.kl).collect()),
            }
        })
        .collect::<Result<_>>()?;
    let mut grid = cfg.grid.clone();
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by_key(|&j| grid[j]);
    grid.sort_unstable();
    let rows = rows.into_iter().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
    TruncationCurve::new(grid, rows, cfg.statistic, cfg.aggregate)
}

/// Powers of two from `lo` to `hi` inclusive.
pub fn pow2_grid(lo: usize, hi: usize) -> Vec<usize> {
    let mut g = Vec::new();
    let mut w = lo.max(1);
    while w <= hi {
        g.push(w);
        w *= 2;
    }
    g
}
