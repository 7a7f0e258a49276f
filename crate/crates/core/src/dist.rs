//! Finite-alphabet distributions and the divergences used throughout.
//!
//! All divergences are in nats. Callers that need bits convert at the edge.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-9;

/// Probability vector over a vocabulary of size `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    probs: Vec<f64>,
}

impl Dist {
    /// Validates entries are non-negative and sum to 1 within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDist("empty vocabulary".into()));
        }
        if let Some(i) = probs.iter().position(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidDist(format!("entry {i} = {} is not a probability", probs[i])));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidDist(format!("entries sum to {s}")));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) || w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidDist("weights must be non-negative with positive sum".into()));
        }
        Self::new(w.iter().map(|x| x / s).collect())
    }

    pub fn uniform(v: usize) -> Self {
        assert!(v > 0, "vocabulary must be non-empty");
        Self { probs: vec![1.0 / v as f64; v] }
    }

    pub fn point(v: usize, at: usize) -> Self {
        assert!(at < v);
        let mut probs = vec![0.0; v];
        probs[at] = 1.0;
        Self { probs }
    }

    /// Builds without checking. Only for internal mixtures known to be normalized.
    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn min_entry(&self) -> f64 {
        self.probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Floor record for this distribution, taken from its smallest entry.
    pub fn floor(&self) -> FloorInfo {
        FloorInfo { epsilon_min: self.min_entry(), source: FloorSource::ComputedMin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloorSource {
    Declared,
    ComputedMin,
}

/// Uniform mass floor `ε_min` together with where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorInfo {
    pub epsilon_min: f64,
    pub source: FloorSource,
}

impl FloorInfo {
    /// A user-declared floor. Values at or below `1/V` are allowed here only.
    pub fn declared(epsilon_min: f64) -> Result<Self> {
        if !(epsilon_min > 0.0 && epsilon_min <= 1.0) {
            return Err(Error::InvalidParam(format!("epsilon_min = {epsilon_min} not in (0,1]")));
        }
        Ok(Self { epsilon_min, source: FloorSource::Declared })
    }
}

fn check_dims(p: &Dist, q: &Dist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: q.len() });
    }
    Ok(())
}

/// Total variation distance, ½‖p − q‖₁.
pub fn tv(p: &Dist, q: &Dist) -> Result<f64> {
    check_dims(p, q)?;
    let s: f64 = p.probs.iter().zip(&q.probs).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * s).min(1.0))
}

/// KL(p ‖ q) in nats. A positive `p` over a zero `q` is an error.
pub fn kl(p: &Dist, q: &Dist) -> Result<f64> {
    check_dims(p, q)?;
    let mut s = 0.0;
    for (i, (&a, &b)) in p.probs.iter().zip(&q.probs).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::SupportViolation { index: i, p: a });
            }
            s += a * (a / b).ln();
        }
    }
    Ok(s.max(0.0))
}

/// Σ (p − q)² / q. Requires `q` strictly positive.
pub fn chi2(p: &Dist, q: &Dist) -> Result<f64> {
    check_dims(p, q)?;
    let mut s = 0.0;
    for (i, (&a, &b)) in p.probs.iter().zip(&q.probs).enumerate() {
        if b <= 0.0 {
            return Err(Error::ZeroEntry(i));
        }
        s += (a - b) * (a - b) / b;
    }
    Ok(s)
}

/// `(1 − μ) q + μ · Uniform`.
pub fn smooth(q: &Dist, mu: f64) -> Result<Dist> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidParam(format!("smoothing level {mu} not in (0,1)")));
    }
    let u = mu / q.len() as f64;
    Ok(Dist::from_raw(q.probs.iter().map(|x| (1.0 - mu) * x + u).collect()))
}

/// A bound value with a flag saying whether its regime condition held.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub value: f64,
    pub applicable: bool,
}

/// `(2/ε_min)·tv²`, flagged not applicable when `tv > ε_min/2`.
pub fn kl_tv_quadratic_bound(tv: f64, epsilon_min: f64) -> Bound {
    Bound { value: 2.0 / epsilon_min * tv * tv, applicable: tv <= epsilon_min / 2.0 }
}

/// Quadratic term plus cubic remainder with constant 1: `tv²/ε + tv³/ε²`.
pub fn kl_tv_cubic_envelope(tv: f64, epsilon_min: f64) -> f64 {
    tv * tv / epsilon_min + tv.powi(3) / (epsilon_min * epsilon_min)
}

/// Bound for a decoder smoothed at level `mu`: the cubic envelope at floor `μ/V`
/// and TV `δ + μ`, i.e. `V(δ+μ)²/μ + V²(δ+μ)³/μ²`.
pub fn kl_tv_smoothed_bound(v: usize, delta: f64, mu: f64) -> f64 {
    kl_tv_cubic_envelope(delta + mu, mu / v as f64)
}

/// Pinsker: `tv ≤ sqrt(kl/2)`.
pub fn pinsker_tv_bound(kl_nats: f64) -> f64 {
    (kl_nats / 2.0).sqrt()
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.log2()).sum::<f64>()
}
