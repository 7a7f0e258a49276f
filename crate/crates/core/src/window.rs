//! Closed-form window, block-length, exponent and overhead calculators.
//!
//! Every calculator returns its value together with an applicability record.
//! Intermediates stay real-valued; the ceiling is applied once at the end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::source::{LagProfile, SyntheticSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub c_ts: f64,
    pub alpha: f64,
    pub epsilon_min: Option<f64>,
    pub vocab: usize,
}

impl SensitivityParams {
    pub fn new(c_ts: f64, alpha: f64, epsilon_min: Option<f64>, vocab: usize) -> Result<Self> {
        if !(c_ts > 0.0 && alpha > 0.0) || epsilon_min.is_some_and(|e| !(e > 0.0)) || vocab == 0 {
            return Err(Error::InvalidParam("sensitivity parameters must be positive".into()));
        }
        Ok(Self { c_ts, alpha, epsilon_min, vocab })
    }

    /// Constants of a power-lag source: its computed `C_TS` and the floor `η/V`.
    pub fn of_source(src: &SyntheticSource) -> Result<Self> {
        let LagProfile::PowerLag { alpha } = src.spec().profile else {
            return Err(Error::InvalidParam("power-lag source required".into()));
        };
        let floor = src.eta() / src.vocab() as f64;
        Self::new(src.sensitivity_constant(), alpha, (floor > 0.0).then_some(floor), src.vocab())
    }
}

/// Which bound produced a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    BoundedFloor,
    Smoothing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calc<T> {
    pub value: T,
    /// The real-valued quantity before any ceiling.
    pub raw: f64,
    pub route: Route,
    pub in_regime: bool,
}

/// Ceiling that ignores floating-point noise just above an integer.
pub fn ceil_tol(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r.max(1.0) as usize
    } else {
        x.ceil().max(1.0) as usize
    }
}

/// `⌈(C_TS/ε)^{1/α}⌉`: window whose TV envelope is at most `ε`.
pub fn window_tv(p: &SensitivityParams, eps_tv: f64) -> Result<Calc<usize>> {
    if !(eps_tv > 0.0) {
        return Err(Error::InvalidParam("eps_tv must be positive".into()));
    }
    let raw = (p.c_ts / eps_tv).powf(1.0 / p.alpha);
    Ok(Calc { value: ceil_tol(raw), raw, route: Route::Direct, in_regime: true })
}

/// Window for a KL target through the bounded-floor conversion:
/// `⌈((2/ε_min)^{1/2} C_TS / ε_KL^{1/2})^{1/α}⌉`. Out of regime when the TV
/// level this implies exceeds `ε_min/2`, i.e. when `ε_KL > ε_min/2`.
pub fn window_kl(p: &SensitivityParams, eps_kl: f64) -> Result<Calc<usize>> {
    let floor = p.epsilon_min.ok_or_else(|| Error::Precondition("window_kl needs a probability floor".into()))?;
    if !(eps_kl > 0.0) {
        return Err(Error::InvalidParam("eps_kl must be positive".into()));
    }
    let raw = ((2.0 / floor).sqrt() * p.c_ts / eps_kl.sqrt()).powf(1.0 / p.alpha);
    let tv_level = (eps_kl * floor / 2.0).sqrt();
    Ok(Calc { value: ceil_tol(raw), raw, route: Route::BoundedFloor, in_regime: tv_level <= floor / 2.0 })
}

/// `⌈ln(C_mix/ε)/ln(1/ρ)⌉` for a geometrically mixing source.
pub fn window_geometric(c_mix: f64, rho: f64, eps: f64) -> Result<Calc<usize>> {
    if !(rho > 0.0 && rho < 1.0) || !(eps > 0.0) || !(c_mix > 0.0) {
        return Err(Error::InvalidParam("need 0 < rho < 1 and positive c_mix, eps".into()));
    }
    let raw = ((c_mix / eps).ln() / (1.0 / rho).ln()).max(1.0);
    Ok(Calc { value: ceil_tol(raw), raw, route: Route::Direct, in_regime: true })
}

/// `B* = w^{α/2}/(2√C_TS)`.
pub fn block_len_star(p: &SensitivityParams, w: usize) -> Result<f64> {
    if w < 1 {
        return Err(Error::InvalidParam("w must be at least 1".into()));
    }
    Ok((w as f64).powf(p.alpha / 2.0) / (2.0 * p.c_ts.sqrt()))
}

/// Geometric analogue `B* = ρ^{−w/2}/(2√C_mix)`.
pub fn block_len_star_geometric(c_mix: f64, rho: f64, w: usize) -> f64 {
    rho.powf(-(w as f64) / 2.0) / (2.0 * c_mix.sqrt())
}

/// `w_n = ⌈n^{1/(α+1)}⌉`.
pub fn achievability_window(n: u64, alpha: f64) -> Result<usize> {
    if n < 1 || !(alpha > 0.0) {
        return Err(Error::InvalidParam("need n ≥ 1 and alpha > 0".into()));
    }
    Ok(ceil_tol((n as f64).powf(1.0 / (alpha + 1.0))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    pub distortion_exp: f64,
    pub rate_exp_expectation: f64,
    pub rate_exp_hp: f64,
}

pub fn exponents(alpha: f64) -> Result<ExponentReport> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParam("alpha must be positive".into()));
    }
    let e = alpha / (alpha + 1.0);
    Ok(ExponentReport { distortion_exp: alpha.min(1.0) / (alpha + 1.0), rate_exp_expectation: e, rate_exp_hp: e / 2.0 })
}

/// Memory factor of the universal scheme: `n^{(α−α_min)/((α+1)(α_min+1))}`.
pub fn universality_overhead(alpha: f64, alpha_min: f64, n: u64) -> Result<f64> {
    if !(alpha_min > 0.0 && alpha >= alpha_min) {
        return Err(Error::InvalidParam("need alpha ≥ alpha_min > 0".into()));
    }
    Ok((n as f64).powf((alpha - alpha_min) / ((alpha + 1.0) * (alpha_min + 1.0))))
}

/// KL gap of sink-plus-recent eviction above the full-cache floor,
/// `(2/ε_min) C_TS² k^{−2α}`, in regime once `k ≥ (2C_TS/ε_min)^{1/α}`.
pub fn sink_recent_gap(p: &SensitivityParams, k: usize) -> Result<Calc<f64>> {
    let floor = p.epsilon_min.ok_or_else(|| Error::Precondition("sink_recent_gap needs a probability floor".into()))?;
    let kf = k as f64;
    let v = 2.0 / floor * p.c_ts * p.c_ts * kf.powf(-2.0 * p.alpha);
    let threshold = (2.0 * p.c_ts / floor).powf(1.0 / p.alpha);
    Ok(Calc { value: v, raw: v, route: Route::BoundedFloor, in_regime: kf >= threshold })
}
