//! Multi-layer rate allocation: Lipschitz sensitivities, reverse water-filling
//! over per-layer `R(D)` curves, and the dimension/quantization arithmetic.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::wz::blahut_arimoto;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStack {
    /// Full-block Lipschitz constant per layer.
    pub l_g: Vec<f64>,
    /// Residual-branch Lipschitz constant per layer.
    pub l_b: Vec<f64>,
    pub l_ln: f64,
    pub skip: bool,
}

impl LayerStack {
    pub fn uniform(layers: usize, l_g: f64, l_b: f64, l_ln: f64, skip: bool) -> Result<Self> {
        let s = Self { l_g: vec![l_g; layers], l_b: vec![l_b; layers], l_ln, skip };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l_g.is_empty() {
            return Err(Error::InvalidParam("need at least one layer".into()));
        }
        if self.l_b.len() != self.l_g.len() {
            return Err(Error::DimensionMismatch { left: self.l_g.len(), right: self.l_b.len() });
        }
        let ok = |x: &f64| *x > 0.0 && x.is_finite();
        if !self.l_g.iter().all(ok) || !self.l_b.iter().all(ok) || !ok(&self.l_ln) {
            return Err(Error::InvalidParam("Lipschitz constants must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.l_g.len()
    }

    /// `√(1 + (L_b·L_LN)²)` with skips, `L_g` otherwise.
    pub fn effective(&self, layer: usize) -> f64 {
        if self.skip {
            (1.0 + (self.l_b[layer] * self.l_ln).powi(2)).sqrt()
        } else {
            self.l_g[layer]
        }
    }
}

/// `s^{(ℓ)} = Π_{m>ℓ} L_eff^{(m)}²`, in layer order.
pub fn sensitivities(stack: &LayerStack) -> Result<Vec<f64>> {
    stack.validate()?;
    let l = stack.layers();
    let mut s = vec![1.0; l];
    for i in (0..l.saturating_sub(1)).rev() {
        s[i] = s[i + 1] * stack.effective(i + 1).powi(2);
    }
    Ok(s)
}

/// A convex nonincreasing per-layer `R(D)` in bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RdFamily {
    /// `½ log₂(σ²/D)` for `D < σ²`, zero beyond.
    Gaussian { variance: f64 },
    /// Blahut–Arimoto samples, sorted by increasing distortion. `slope` holds
    /// `|R′(D)|` in bits per unit distortion.
    Tabulated { distortion: Vec<f64>, rate: Vec<f64>, slope: Vec<f64> },
}

impl RdFamily {
    /// Tabulates a discrete source under a distortion matrix, using `points`
    /// log-spaced Lagrange slopes.
    pub fn tabulated(p: &[f64], d: &[Vec<f64>], points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidParam("need at least two table points".into()));
        }
        let (lo, hi) = (1e-2f64, 60.0f64);
        let mut rows: Vec<(f64, f64, f64)> = (0..points)
            .map(|i| {
                let s = lo * (hi / lo).powf(i as f64 / (points - 1) as f64);
                blahut_arimoto(p, d, s).map(|pt| (pt.distortion, pt.rate_bits, s / std::f64::consts::LN_2))
            })
            .collect::<Result<_>>()?;
        // Close the curve at D_max with zero rate and zero slope.
        let ny = d[0].len();
        let d_max = (0..ny).map(|y| p.iter().zip(d).map(|(px, r)| px * r[y]).sum::<f64>()).fold(f64::INFINITY, f64::min);
        rows.retain(|r| r.0 < d_max);
        rows.push((d_max, 0.0, 0.0));
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        rows.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-13);
        let (distortion, rest): (Vec<f64>, Vec<(f64, f64)>) = rows.into_iter().map(|(a, b, c)| (a, (b, c))).unzip();
        let (rate, slope) = rest.into_iter().unzip();
        Ok(RdFamily::Tabulated { distortion, rate, slope })
    }

    fn validate(&self) -> Result<()> {
        match self {
            RdFamily::Gaussian { variance } if !(*variance > 0.0) => {
                Err(Error::InvalidParam("Gaussian variance must be positive".into()))
            }
            RdFamily::Tabulated { distortion, rate, slope }
                if distortion.len() < 2 || rate.len() != distortion.len() || slope.len() != distortion.len() =>
            {
                Err(Error::InvalidParam("tabulated curve needs ≥ 2 aligned points".into()))
            }
            _ => Ok(()),
        }
    }

    /// Largest useful distortion (zero rate from here on).
    pub fn d_max(&self) -> f64 {
        match self {
            RdFamily::Gaussian { variance } => *variance,
            RdFamily::Tabulated { distortion, .. } => *distortion.last().unwrap(),
        }
    }

    pub fn rate(&self, d: f64) -> f64 {
        match self {
            RdFamily::Gaussian { variance } => {
                if d >= *variance {
                    0.0
                } else {
                    0.5 * (variance / d).log2()
                }
            }
            RdFamily::Tabulated { distortion, rate, .. } => interp(distortion, rate, d),
        }
    }

    /// `|R′(D)|`.
    pub fn slope(&self, d: f64) -> f64 {
        match self {
            RdFamily::Gaussian { variance } => {
                if d >= *variance {
                    0.0
                } else {
                    1.0 / (2.0 * d * std::f64::consts::LN_2)
                }
            }
            RdFamily::Tabulated { distortion, slope, .. } => interp(distortion, slope, d),
        }
    }

    /// Distortion where `|R′| = m`, clamped to the curve's range.
    pub fn distortion_at_slope(&self, m: f64) -> f64 {
        match self {
            RdFamily::Gaussian { variance } => {
                if m <= 0.0 {
                    *variance
                } else {
                    (1.0 / (2.0 * m * std::f64::consts::LN_2)).min(*variance)
                }
            }
            RdFamily::Tabulated { distortion, slope, .. } => {
                if m >= slope[0] {
                    return distortion[0];
                }
                if m <= 0.0 {
                    return *distortion.last().unwrap();
                }
                // slope decreases along the table
                let i = slope.partition_point(|&s| s > m).clamp(1, slope.len() - 1);
                let (s0, s1) = (slope[i - 1], slope[i]);
                let t = if s0 == s1 { 0.0 } else { (s0 - m) / (s0 - s1) };
                distortion[i - 1] + t * (distortion[i] - distortion[i - 1])
            }
        }
    }
}

fn interp(x: &[f64], y: &[f64], at: f64) -> f64 {
    if at <= x[0] {
        return y[0];
    }
    if at >= x[x.len() - 1] {
        return y[y.len() - 1];
    }
    let i = x.partition_point(|&v| v <= at).clamp(1, x.len() - 1);
    let t = (at - x[i - 1]) / (x[i] - x[i - 1]);
    y[i - 1] + t * (y[i] - y[i - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub distortions: Vec<f64>,
    pub rates: Vec<f64>,
    pub sensitivities: Vec<f64>,
    pub lambda: f64,
    pub budget: f64,
    /// `false` for layers clamped at zero rate.
    pub active: Vec<bool>,
    pub total_rate: f64,
}

impl Allocation {
    /// `L_g²·Σ s D`.
    pub fn constraint_value(&self, l_g_sq: f64) -> f64 {
        l_g_sq * self.sensitivities.iter().zip(&self.distortions).map(|(s, d)| s * d).sum::<f64>()
    }

    /// `max |R′(D)| − λs|` over active layers.
    pub fn kkt_residual(&self, families: &[RdFamily]) -> f64 {
        (0..self.distortions.len())
            .filter(|&i| self.active[i])
            .map(|i| (fam(families, i).slope(self.distortions[i]) - self.lambda * self.sensitivities[i]).abs())
            .fold(0.0, f64::max)
    }

    /// Spread of the optimal per-layer dimension, `ln(D_max/D_min)/log_range`
    /// over active layers.
    pub fn dc_variation(&self, log_range: f64) -> f64 {
        let act: Vec<f64> = self.distortions.iter().zip(&self.active).filter(|(_, a)| **a).map(|(d, _)| *d).collect();
        if act.is_empty() {
            return 0.0;
        }
        let hi = act.iter().cloned().fold(f64::MIN, f64::max);
        let lo = act.iter().cloned().fold(f64::MAX, f64::min);
        (hi / lo).ln() / log_range
    }
}

fn fam(families: &[RdFamily], i: usize) -> &RdFamily {
    if families.len() == 1 {
        &families[0]
    } else {
        &families[i]
    }
}

/// Reverse water-filling: minimize `Σ R_ℓ(D_ℓ)` subject to
/// `L_g²·Σ s_ℓ D_ℓ = budget`. `families` holds one curve per layer or a
/// single shared curve.
pub fn water_fill(stack: &LayerStack, families: &[RdFamily], budget: f64, l_g_sq: f64) -> Result<Allocation> {
    let s = sensitivities(stack)?;
    let l = s.len();
    if families.len() != 1 && families.len() != l {
        return Err(Error::DimensionMismatch { left: l, right: families.len() });
    }
    families.iter().try_for_each(|f| f.validate())?;
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::InvalidParam(format!("infeasible distortion budget {budget}")));
    }
    if !(l_g_sq > 0.0) {
        return Err(Error::InvalidParam("aggregate constant must be positive".into()));
    }
    let build = |lambda: f64| -> Vec<f64> { (0..l).map(|i| fam(families, i).distortion_at_slope(lambda * s[i])).collect() };
    let value = |d: &[f64]| l_g_sq * s.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    let saturated: Vec<f64> = (0..l).map(|i| fam(families, i).d_max()).collect();
    let d_min_total = value(&build(f64::MAX));
    if budget <= d_min_total {
        return Err(Error::InvalidParam(format!("infeasible budget {budget}: the curves cannot go below {d_min_total}")));
    }
    let (distortions, lambda) = if budget >= value(&saturated) {
        (saturated, 0.0)
    } else {
        // value(build(λ)) decreases in λ.
        let mut hi = 1.0;
        while value(&build(hi)) > budget {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if value(&build(mid)) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        let lam = 0.5 * (lo + hi);
        (build(lam), lam)
    };
    let active: Vec<bool> = (0..l).map(|i| distortions[i] < fam(families, i).d_max() * (1.0 - 1e-12)).collect();
    let rates: Vec<f64> = (0..l).map(|i| fam(families, i).rate(distortions[i])).collect();
    let total_rate = rates.iter().sum();
    Ok(Allocation { distortions, rates, sensitivities: s, lambda, budget, active, total_rate })
}

/// Same budget split into equal per-layer distortions.
pub fn uniform_allocation_rate(stack: &LayerStack, families: &[RdFamily], budget: f64, l_g_sq: f64) -> Result<f64> {
    let s = sensitivities(stack)?;
    let d = budget / (l_g_sq * s.iter().sum::<f64>());
    Ok((0..s.len()).map(|i| fam(families, i).rate(d)).sum())
}

/// `d_c ≥ R_cont / log₂(R_U/r_min)`, with the rate in bits.
pub fn intrinsic_dim_bound(rate_bits: f64, r_u: f64, r_min: f64) -> Result<f64> {
    if !(r_min > 0.0) || !(r_u > r_min) {
        return Err(Error::InvalidParam(format!("need R_U > r_min > 0, got R_U = {r_u}, r_min = {r_min}")));
    }
    if !(rate_bits >= 0.0) {
        return Err(Error::InvalidParam("rate must be non-negative".into()));
    }
    Ok(rate_bits / (r_u / r_min).log2())
}

/// Spread in optimal latent dimension implied by a sensitivity ratio,
/// `ln(ratio)/log_range`.
pub fn dc_variation(sensitivity_ratio: f64, log_range: f64) -> Result<f64> {
    if !(sensitivity_ratio >= 1.0) || !(log_range > 0.0) {
        return Err(Error::InvalidParam("need ratio ≥ 1 and a positive log range".into()));
    }
    Ok(sensitivity_ratio.ln() / log_range)
}

/// `d_c·log₂(1/Δ)` bits.
pub fn quant_overhead(d_c: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) || !(d_c >= 0.0) {
        return Err(Error::InvalidParam(format!("need 0 < Δ ≤ 1 and d_c ≥ 0, got Δ = {delta}, d_c = {d_c}")));
    }
    Ok(d_c * (1.0 / delta).log2())
}

/// One trial of the propagation check: a stack of random maps
/// `g(h) = L·tanh(W h)` with `‖W‖_F = 1`, driven by exact and perturbed
/// attention inputs. Returns `(‖e_L‖², bound)` where the bound unrolls
/// `E_ℓ = 2L_ℓ² E_{ℓ−1} + 2δ_ℓ`.
pub fn propagation_trial(l_g: &[f64], dim: usize, error_scale: f64, seed: u64) -> Result<(f64, f64)> {
    if l_g.is_empty() || dim == 0 {
        return Err(Error::InvalidParam("need at least one layer and dimension".into()));
    }
    let mut rng = rng_from(&[seed, 0xE990]);
    let mut gauss = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let mut h = gauss(dim);
    let mut h_hat = h.clone();
    let mut bound = 0.0;
    for &lip in l_g {
        let mut w = gauss(dim * dim);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        w.iter_mut().for_each(|x| *x /= norm);
        let a = gauss(dim);
        let scale = error_scale * gauss(1)[0].abs();
        let err: Vec<f64> = gauss(dim).into_iter().map(|x| x * scale).collect();
        let delta: f64 = err.iter().map(|x| x * x).sum();
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..dim).map(|r| lip * (0..dim).map(|c| w[r * dim + c] * x[c]).sum::<f64>().tanh()).collect()
        };
        let g = apply(&h);
        let g_hat = apply(&h_hat);
        h = g.iter().zip(&a).map(|(x, y)| x + y).collect();
        h_hat = g_hat.iter().zip(&a).zip(&err).map(|((x, y), e)| x + y + e).collect();
        bound = 2.0 * lip * lip * bound + 2.0 * delta;
    }
    let actual = h.iter().zip(&h_hat).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((actual, bound))
}
