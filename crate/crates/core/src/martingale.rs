//! Monte Carlo checks of the concentration envelopes under long memory.
//!
//! Sequences are fractional Gaussian noise with Hurst index `H = 1 − α/2`
//! (autocovariance `~ H(2H−1)k^{−α}`), synthesized by circulant embedding and
//! clipped to `±J_max`. All sequences have known zero mean.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::ols;
use crate::rng::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MemoryKind {
    LongMemory { alpha: f64 },
    Iid,
    /// Demodulated alternating source: `(2X_t − 1)(−1)^t` for
    /// `X = 0101…` with a random phase.
    Parity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySeq {
    pub kind: MemoryKind,
    pub j_max: f64,
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Exact fGn autocovariance at lag `k` with unit variance.
pub fn fgn_autocov(k: usize, hurst: f64) -> f64 {
    let k = k as f64;
    let h2 = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

/// Asymptotic constant `c` in `Cov(k) ≈ c·k^{−α}`.
pub fn longmem_constant(alpha: f64) -> f64 {
    let h = 1.0 - alpha / 2.0;
    h * (2.0 * h - 1.0)
}

/// Smallest `c` with `|Cov(k)| ≤ c·k^{−α}` for `1 ≤ k ≤ k_max`.
pub fn cov_envelope_constant(alpha: f64, k_max: usize) -> f64 {
    let h = 1.0 - alpha / 2.0;
    (1..=k_max.max(1)).map(|k| fgn_autocov(k, h).abs() * (k as f64).powf(alpha)).fold(0.0, f64::max)
}

fn check_len(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParam("sequence length must be at least 2".into()));
    }
    Ok(())
}

pub fn gen_longmem(n: usize, alpha: f64, j_max: f64, seed: u64) -> Result<MemorySeq> {
    check_len(n)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParam(format!("long-memory alpha must be in (0, 1), got {alpha}")));
    }
    if !(j_max > 0.0) {
        return Err(Error::InvalidParam("J_max must be positive".into()));
    }
    let hurst = 1.0 - alpha / 2.0;
    let m = (2 * (n - 1)).next_power_of_two().max(2);
    let half = m / 2;
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|i| {
            let k = if i <= half { i } else { m - i };
            Complex::new(fgn_autocov(k, hurst), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut c);
    if c.iter().any(|z| z.re < -1e-8) {
        return Err(Error::Precondition("circulant embedding is not non-negative definite".into()));
    }
    let mut rng = rng_from(&[seed, 0xF6A]);
    let mut y: Vec<Complex<f64>> = c
        .iter()
        .map(|z| {
            let s = (z.re.max(0.0) / m as f64).sqrt();
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            Complex::new(s * a, s * b)
        })
        .collect();
    fft.process(&mut y);
    let values = y[..n].iter().map(|z| z.re.clamp(-j_max, j_max)).collect();
    Ok(MemorySeq { kind: MemoryKind::LongMemory { alpha }, j_max, seed, values })
}

pub fn gen_iid(n: usize, j_max: f64, seed: u64) -> Result<MemorySeq> {
    check_len(n)?;
    let mut rng = rng_from(&[seed, 0x11D]);
    let values = (0..n).map(|_| StandardNormal.sample(&mut rng)).map(|x: f64| x.clamp(-j_max, j_max)).collect();
    Ok(MemorySeq { kind: MemoryKind::Iid, j_max, seed, values })
}

pub fn gen_parity(n: usize, seed: u64) -> Result<MemorySeq> {
    check_len(n)?;
    let phase = (crate::rng::mix(&[seed, 0x9A7]) & 1) as usize;
    let values = (0..n)
        .map(|t| {
            let x = ((t + phase) % 2) as f64;
            let sign = if t % 2 == 0 { 1.0 } else { -1.0 };
            (2.0 * x - 1.0) * sign
        })
        .collect();
    Ok(MemorySeq { kind: MemoryKind::Parity, j_max: 1.0, seed, values })
}

pub fn generate(kind: MemoryKind, n: usize, j_max: f64, seed: u64) -> Result<MemorySeq> {
    match kind {
        MemoryKind::LongMemory { alpha } => gen_longmem(n, alpha, j_max, seed),
        MemoryKind::Iid => gen_iid(n, j_max, seed),
        MemoryKind::Parity => gen_parity(n, seed),
    }
}

/// Independent sequences for seeds `base, base+1, …`.
pub fn generate_many(kind: MemoryKind, n: usize, j_max: f64, base_seed: u64, count: usize) -> Result<Vec<MemorySeq>> {
    (0..count as u64).into_par_iter().map(|i| generate(kind, n, j_max, base_seed + i)).collect()
}

/// Seed-averaged `(1/(n−k))Σ x_t x_{t+k}` using the known zero mean.
pub fn empirical_autocov(seqs: &[MemorySeq], lags: &[usize]) -> Result<Vec<f64>> {
    let n = common_len(seqs)?;
    lags.iter()
        .map(|&k| {
            if k >= n {
                return Err(Error::InvalidParam(format!("lag {k} exceeds the sequence length {n}")));
            }
            let per: f64 = seqs
                .iter()
                .map(|s| s.values.iter().zip(&s.values[k..]).map(|(a, b)| a * b).sum::<f64>() / (n - k) as f64)
                .sum();
            Ok(per / seqs.len() as f64)
        })
        .collect()
}

fn common_len(seqs: &[MemorySeq]) -> Result<usize> {
    let n = seqs.first().map(|s| s.values.len()).ok_or_else(|| Error::Empty("no sequences".into()))?;
    if seqs.iter().any(|s| s.values.len() != n) {
        return Err(Error::InvalidParam("sequences must share one length".into()));
    }
    Ok(n)
}

/// Variance of non-overlapping block sums, pooled over sequences and
/// centred on the pooled mean.
pub fn block_variance(seqs: &[MemorySeq], b: usize) -> Result<f64> {
    let n = common_len(seqs)?;
    if b == 0 || b > n {
        return Err(Error::InvalidParam(format!("block length {b} outside [1, {n}]")));
    }
    let sums: Vec<f64> = seqs.iter().flat_map(|s| s.values.chunks_exact(b).map(|c| c.iter().sum::<f64>())).collect();
    let mean = sums.iter().sum::<f64>() / sums.len() as f64;
    Ok(sums.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / sums.len() as f64)
}

/// Number of smallest block lengths left out of slope fits.
pub const EDGE_EXCLUDED: usize = 2;

/// Slope of `ln Var(block sum)` against `ln B`, skipping the two smallest
/// block lengths.
pub fn block_variance_slope(seqs: &[MemorySeq], b_grid: &[usize]) -> Result<f64> {
    let n = common_len(seqs)?;
    let mut grid = b_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    if grid.iter().any(|&b| b < 2 || b > n / 10) {
        return Err(Error::InvalidParam(format!("block grid must lie in [2, n/10] = [2, {}]", n / 10)));
    }
    if grid.len() < EDGE_EXCLUDED + 2 {
        return Err(Error::InvalidParam(format!("need at least {} block lengths", EDGE_EXCLUDED + 2)));
    }
    let kept = &grid[EDGE_EXCLUDED..];
    let mut x = Vec::with_capacity(kept.len());
    let mut y = Vec::with_capacity(kept.len());
    for &b in kept {
        let v = block_variance(seqs, b)?;
        if !(v > 0.0) {
            return Err(Error::Validation(format!("degenerate: block-sum variance is zero at B = {b}")));
        }
        x.push((b as f64).ln());
        y.push(v.ln());
    }
    Ok(ols(&x, &y)?.1)
}

/// `B·V + 4J²C·B·Σ_{k<B} k^{−α}`.
pub fn lemma_block_variance_bound(b: usize, variance: f64, j_max: f64, c_ts: f64, alpha: f64) -> f64 {
    let s: f64 = (1..b).map(|k| (k as f64).powf(-alpha)).sum();
    b as f64 * variance + 4.0 * j_max * j_max * c_ts * b as f64 * s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeParams {
    /// Per-step variance `V`.
    pub variance: f64,
    pub j_max: f64,
    /// Decay constant with `|Cov(k)| ≤ 2J²C·k^{−α}`; zero for no memory.
    pub c_ts: f64,
    pub alpha: f64,
}

impl EnvelopeParams {
    /// Parameters matching [`gen_longmem`] output.
    pub fn longmem(alpha: f64, j_max: f64, n: usize) -> Self {
        Self { variance: 1.0, j_max, c_ts: cov_envelope_constant(alpha, n) / (2.0 * j_max * j_max), alpha }
    }

    pub fn iid(j_max: f64) -> Self {
        Self { variance: 1.0, j_max, c_ts: 0.0, alpha: 1.0 }
    }
}

/// `(M/n)·√((n/B)·½·ln(2/δ))` with increment range `M = 2B·J_max`.
pub fn azuma_envelope(n: usize, b: usize, j_max: f64, delta: f64) -> f64 {
    let m = 2.0 * b as f64 * j_max;
    m / n as f64 * ((n as f64 / b as f64) * 0.5 * (2.0 / delta).ln()).sqrt()
}

/// `√(2W/n²·ln(1/δ)) + M/(3n)·ln(1/δ)` with `W = (n/B)·Var bound`.
pub fn freedman_envelope(n: usize, b: usize, p: &EnvelopeParams, delta: f64) -> f64 {
    let l = (1.0 / delta).ln();
    let w = (n as f64 / b as f64) * lemma_block_variance_bound(b, p.variance, p.j_max, p.c_ts, p.alpha);
    let m = 2.0 * b as f64 * p.j_max;
    (2.0 * w / (n as f64).powi(2) * l).sqrt() + m / (3.0 * n as f64) * l
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelopes {
    pub azuma: f64,
    pub freedman: f64,
    /// `(1−δ)` quantile of `(1/n)|Σ_t x_t|` across sequences.
    pub empirical: f64,
    pub coverage_azuma: f64,
    pub coverage_freedman: f64,
}

pub fn deviation_envelopes(seqs: &[MemorySeq], b: usize, delta: f64, p: &EnvelopeParams) -> Result<Envelopes> {
    let n = common_len(seqs)?;
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidParam(format!("δ must be in (0, 1], got {delta}")));
    }
    if b == 0 || b > n {
        return Err(Error::InvalidParam(format!("block length {b} outside [1, {n}]")));
    }
    let devs: Vec<f64> = seqs.iter().map(|s| (s.values.iter().sum::<f64>() / n as f64).abs()).collect();
    let azuma = azuma_envelope(n, b, p.j_max, delta);
    let freedman = freedman_envelope(n, b, p, delta);
    let mut sorted = devs.clone();
    sorted.sort_by(f64::total_cmp);
    let empirical = crate::fit::percentile(&sorted, 1.0 - delta);
    let cover = |bound: f64| devs.iter().filter(|&&d| d <= bound).count() as f64 / devs.len() as f64;
    Ok(Envelopes { azuma, freedman, empirical, coverage_azuma: cover(azuma), coverage_freedman: cover(freedman) })
}

/// Log-log slope of an envelope over an `n` grid with `B = ⌈n^{1/(α+1)}⌉`.
pub fn envelope_scaling(ns: &[usize], alpha: f64, envelope: impl Fn(usize, usize) -> f64) -> Result<f64> {
    if ns.len() < 2 {
        return Err(Error::InvalidParam("need at least two horizons".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = ns
        .iter()
        .map(|&n| {
            let b = crate::window::ceil_tol((n as f64).powf(1.0 / (alpha + 1.0)));
            ((n as f64).ln(), envelope(n, b).ln())
        })
        .unzip();
    Ok(ols(&x, &y)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fgn_autocov_values() {
        assert!((fgn_autocov(0, 0.75) - 1.0).abs() < 1e-12);
        assert!((fgn_autocov(1, 0.75) - (2f64.powf(1.5) / 2.0 - 1.0)).abs() < 1e-12);
        // H = ½ is white noise
        assert!(fgn_autocov(3, 0.5).abs() < 1e-12);
        let c = longmem_constant(0.5);
        assert!((fgn_autocov(1000, 0.75) / (c * 1000f64.powf(-0.5)) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn generators_are_bounded_and_reproducible() {
        let a = gen_longmem(1000, 0.5, 2.0, 3).unwrap();
        let b = gen_longmem(1000, 0.5, 2.0, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.values.iter().all(|x| x.abs() <= 2.0));
        assert_ne!(a.values, gen_longmem(1000, 0.5, 2.0, 4).unwrap().values);
        assert!(gen_longmem(10, 1.0, 1.0, 0).is_err());
        assert!(gen_longmem(10, 0.0, 1.0, 0).is_err());
        let p = gen_parity(6, 0).unwrap().values;
        assert!(p.iter().all(|&x| x == p[0]) && p[0].abs() == 1.0);
    }

    #[test]
    fn constant_sequences_are_degenerate() {
        let s = vec![MemorySeq { kind: MemoryKind::Iid, j_max: 1.0, seed: 0, values: vec![0.5; 400] }; 3];
        match block_variance_slope(&s, &[2, 4, 8, 16, 32]) {
            Err(Error::Validation(m)) => assert!(m.contains("degenerate")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_grid_checks() {
        let s = generate_many(MemoryKind::Iid, 200, 4.0, 0, 2).unwrap();
        assert!(block_variance_slope(&s, &[2, 4, 8, 40]).is_err());
        assert!(block_variance_slope(&s, &[2, 4, 8]).is_err());
        assert!(block_variance_slope(&s, &[1, 2, 4, 8]).is_err());
    }

    #[test]
    fn envelope_formulas() {
        let p = EnvelopeParams::iid(1.0);
        // δ = 1: the Freedman envelope collapses to zero.
        assert_eq!(freedman_envelope(100, 10, &p, 1.0), 0.0);
        let a = azuma_envelope(100, 10, 1.0, 0.1);
        assert!((a - 20.0 / 100.0 * (10.0 * 0.5 * 20f64.ln()).sqrt()).abs() < 1e-12);
        assert_eq!(lemma_block_variance_bound(5, 2.0, 1.0, 0.0, 0.5), 10.0);
    }
}
