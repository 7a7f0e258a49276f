//! Universal window selection: a logarithmic grid of exponents, one window per
//! grid point, and exponential weights over per-block Lagrangian losses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{Scratch, SyntheticSource};
use crate::window::ceil_tol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGrid {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub n: u64,
    /// `α_j = α_min + j/ln n`, `j = 0..=J`
    pub points: Vec<f64>,
    /// `⌈n^{1/(α_j+1)}⌉`, strictly decreasing
    pub windows: Vec<usize>,
}

impl WindowGrid {
    pub fn j(&self) -> usize {
        self.points.len() - 1
    }

    /// Distance from `alpha` to the nearest grid point.
    pub fn gap(&self, alpha: f64) -> f64 {
        self.points.iter().map(|p| (p - alpha).abs()).fold(f64::INFINITY, f64::min)
    }
}

pub fn build_grid(alpha_min: f64, alpha_max: f64, n: u64) -> Result<WindowGrid> {
    if !(alpha_min > 0.0) || alpha_max < alpha_min {
        return Err(Error::InvalidParam(format!("need 0 < alpha_min ≤ alpha_max, got [{alpha_min}, {alpha_max}]")));
    }
    if n < 3 {
        return Err(Error::InvalidParam("horizon must be at least 3".into()));
    }
    let ln_n = (n as f64).ln();
    let j = if alpha_max == alpha_min { 0 } else { ceil_tol((alpha_max - alpha_min) * ln_n) };
    let points: Vec<f64> = (0..=j).map(|i| alpha_min + i as f64 / ln_n).collect();
    let mut windows: Vec<usize> = points.iter().map(|a| ceil_tol((n as f64).powf(1.0 / (a + 1.0)))).collect();
    // Ceilings can collide for tiny n; keep the sequence strictly decreasing.
    for i in 1..windows.len() {
        if windows[i] >= windows[i - 1] {
            windows[i] = windows[i - 1].saturating_sub(1).max(1);
        }
    }
    if windows.windows(2).any(|p| p[0] <= p[1]) {
        return Err(Error::InvalidParam("horizon too short for distinct windows".into()));
    }
    Ok(WindowGrid { alpha_min, alpha_max, n, points, windows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeState {
    pub weights: Vec<f64>,
    /// Learning rate applied to raw losses in `[0, ℓ_max]`.
    pub beta: f64,
    pub cumulative: Vec<f64>,
    pub lambda: f64,
    pub l_max: f64,
    log_w: Vec<f64>,
}

impl HedgeState {
    pub fn new(n_experts: usize, beta: f64, lambda: f64, l_max: f64) -> Result<Self> {
        if n_experts == 0 || !(beta >= 0.0) || !(l_max > 0.0) {
            return Err(Error::InvalidParam("need experts, beta ≥ 0 and l_max > 0".into()));
        }
        Ok(Self {
            weights: vec![1.0 / n_experts as f64; n_experts],
            beta,
            cumulative: vec![0.0; n_experts],
            lambda,
            l_max,
            log_w: vec![0.0; n_experts],
        })
    }

    /// `√(8 ln(J+1)/T)` for unit-range losses, rescaled by `1/ℓ_max`.
    pub fn tuned(n_experts: usize, n_blocks: usize, lambda: f64, l_max: f64) -> Result<Self> {
        let beta = (8.0 * (n_experts as f64).ln() / n_blocks.max(1) as f64).sqrt() / l_max;
        Self::new(n_experts, beta, lambda, l_max)
    }

    /// Index of the largest weight; ties go to the smaller index (larger window).
    pub fn leader(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }
}

/// Selects with the current weights, then applies the multiplicative update.
pub fn hedge_step(state: &HedgeState, losses: &[f64]) -> Result<(usize, HedgeState)> {
    if losses.len() != state.weights.len() {
        return Err(Error::DimensionMismatch { left: losses.len(), right: state.weights.len() });
    }
    if let Some(l) = losses.iter().find(|&&l| !(0.0..=state.l_max * (1.0 + 1e-12)).contains(&l)) {
        return Err(Error::InvalidParam(format!("loss {l} outside [0, {}]", state.l_max)));
    }
    let pick = state.leader();
    let mut next = state.clone();
    for (i, &l) in losses.iter().enumerate() {
        next.log_w[i] -= state.beta * l;
        next.cumulative[i] += l;
    }
    let m = next.log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = next.log_w.iter().map(|x| (x - m).exp()).sum();
    next.weights = next.log_w.iter().map(|x| (x - m).exp() / z).collect();
    Ok((pick, next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HedgeOutcome {
    pub selections: Vec<usize>,
    /// Loss of the argmax selections minus the best fixed expert's loss.
    pub regret: f64,
    /// Same for the weight-averaged loss of the randomized variant.
    pub mixture_regret: f64,
    pub best_expert: usize,
    /// `ℓ_max·√(½·T·ln(J+1))`
    pub bound: f64,
    pub final_state: HedgeState,
}

/// Runs exponential weights over a `T × (J+1)` loss matrix.
pub fn run_hedge(losses: &[Vec<f64>], lambda: f64, l_max: f64) -> Result<HedgeOutcome> {
    let t = losses.len();
    let k = losses.first().map(|r| r.len()).ok_or_else(|| Error::Empty("loss matrix".into()))?;
    let mut state = HedgeState::tuned(k, t, lambda, l_max)?;
    let mut selections = Vec::with_capacity(t);
    let mut alg = 0.0;
    let mut mix = 0.0;
    for row in losses {
        mix += state.weights.iter().zip(row).map(|(w, l)| w * l).sum::<f64>();
        let (pick, next) = hedge_step(&state, row)?;
        alg += row[pick];
        selections.push(pick);
        state = next;
    }
    let mut best_expert = 0;
    for i in 0..k {
        if state.cumulative[i] < state.cumulative[best_expert] {
            best_expert = i;
        }
    }
    let best = state.cumulative[best_expert];
    Ok(HedgeOutcome {
        selections,
        regret: alg - best,
        mixture_regret: mix - best,
        best_expert,
        bound: regret_bound(l_max, t, k),
        final_state: state,
    })
}

/// `ℓ_max·√(½·T·ln(J+1))` with `J+1` experts and `T` blocks.
pub fn regret_bound(l_max: f64, n_blocks: usize, n_experts: usize) -> f64 {
    l_max * (0.5 * n_blocks as f64 * (n_experts as f64).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalTrace {
    pub windows: Vec<usize>,
    pub block_len: usize,
    pub lambda: f64,
    pub l_max: f64,
    /// Per block, per expert: `r_j + λ·d_j`.
    pub losses: Vec<Vec<f64>>,
    pub rates: Vec<f64>,
    /// Per block, per expert: mean KL (nats/token).
    pub distortions: Vec<Vec<f64>>,
    pub outcome: HedgeOutcome,
    /// Largest window the cache ever has to hold.
    pub max_window: usize,
    pub alpha_in_range: bool,
}

/// Per-expert proxy rates `w_j·log₂V/B` (bits per token).
pub fn proxy_rates(windows: &[usize], vocab: usize, block_len: usize) -> Vec<f64> {
    windows.iter().map(|&w| w as f64 * (vocab as f64).log2() / block_len as f64).collect()
}

/// Mean block KL for every window, for blocks of `block_len` positions over one
/// sampled sequence of length `n`. Position `t` predicts token `t` from the
/// first `t` tokens; position 0 is skipped.
pub fn block_distortions(src: &SyntheticSource, windows: &[usize], n: usize, block_len: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if block_len == 0 || n < block_len {
        return Err(Error::InvalidParam("need 1 ≤ block_len ≤ n".into()));
    }
    let seq = src.sample_prefix(n + 1, seed);
    let n_blocks = n / block_len;
    (0..n_blocks)
        .into_par_iter()
        .map_init(Scratch::new, |scratch, m| {
            let mut acc = vec![0.0; windows.len()];
            for t in m * block_len + 1..=(m + 1) * block_len {
                let d = src.window_divergences(&seq[..t], windows, None, scratch)?;
                for (a, x) in acc.iter_mut().zip(d) {
                    *a += x.kl;
                }
            }
            Ok(acc.into_iter().map(|a| a / block_len as f64).collect())
        })
        .collect()
}

/// Largest possible per-token KL against a conditional with floor `η/V`.
pub fn kl_ceiling(src: &SyntheticSource) -> f64 {
    (src.vocab() as f64 / src.eta()).ln()
}

/// λ from the finite-difference slope of the expert frontier at `target_d`:
/// the negative rate change per unit distortion between the two experts whose
/// mean distortions bracket the target.
pub fn frontier_lambda(rates: &[f64], mean_d: &[f64], target_d: f64) -> Result<f64> {
    let mut pts: Vec<(f64, f64)> = mean_d.iter().cloned().zip(rates.iter().cloned()).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for p in pts.windows(2) {
        let ((d0, r0), (d1, r1)) = (p[0], p[1]);
        if d0 <= target_d && target_d <= d1 && d1 > d0 {
            return Ok(((r0 - r1) / (d1 - d0)).max(0.0));
        }
    }
    Err(Error::Precondition(format!("target distortion {target_d} outside the measured frontier")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniversalConfig {
    pub n: usize,
    pub block_len: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Lagrange multiplier; `None` derives it from the frontier at `target_d`.
    pub lambda: Option<f64>,
    #[serde(default)]
    pub target_d: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

pub fn run_universal(src: &SyntheticSource, cfg: &UniversalConfig) -> Result<UniversalTrace> {
    let grid = build_grid(cfg.alpha_min, cfg.alpha_max, cfg.n as u64)?;
    let alpha_in_range = match src.alpha() {
        Some(a) => (cfg.alpha_min..=cfg.alpha_max).contains(&a),
        None => false,
    };
    if !alpha_in_range {
        log::warn!("source exponent lies outside [{}, {}]", cfg.alpha_min, cfg.alpha_max);
    }
    let d = block_distortions(src, &grid.windows, cfg.n, cfg.block_len, cfg.seed)?;
    let rates = proxy_rates(&grid.windows, src.vocab(), cfg.block_len);
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => {
            let k = grid.windows.len();
            let mean_d: Vec<f64> = (0..k).map(|j| d.iter().map(|r| r[j]).sum::<f64>() / d.len() as f64).collect();
            let target = cfg.target_d.unwrap_or_else(|| mean_d.iter().sum::<f64>() / k as f64);
            frontier_lambda(&rates, &mean_d, target)?
        }
    };
    let l_max = rates[0] + lambda * kl_ceiling(src);
    let losses: Vec<Vec<f64>> =
        d.iter().map(|row| row.iter().zip(&rates).map(|(dj, rj)| rj + lambda * dj).collect()).collect();
    let outcome = run_hedge(&losses, lambda, l_max)?;
    Ok(UniversalTrace {
        max_window: grid.windows[0],
        windows: grid.windows,
        block_len: cfg.block_len,
        lambda,
        l_max,
        losses,
        rates,
        distortions: d,
        outcome,
        alpha_in_range,
    })
}
