//! Decay-law fits in log space: power, exponential, stretched exponential and
//! a continuous broken power law. Model comparison is by AIC over the log
//! residuals; confidence intervals come from resampling prefixes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::sweep::TruncationCurve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `C·w^{−α}`, params `[C, α]`
    Power,
    /// `C·ρ^w`, params `[C, ρ]`
    Exponential,
    /// `C·exp(−(w/τ)^β)`, params `[C, τ, β]`
    StretchedExp,
    /// continuous two-segment power law, params `[C, α₁, α₂, knot]`
    BrokenPower,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Power, Family::Exponential, Family::StretchedExp, Family::BrokenPower];

    pub fn n_params(self) -> usize {
        match self {
            Family::Power | Family::Exponential => 2,
            Family::StretchedExp => 3,
            Family::BrokenPower => 4,
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            Family::Power => &["C", "alpha"],
            Family::Exponential => &["C", "rho"],
            Family::StretchedExp => &["C", "tau", "beta"],
            Family::BrokenPower => &["C", "alpha1", "alpha2", "knot"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Power => "power",
            Family::Exponential => "exponential",
            Family::StretchedExp => "stretched_exp",
            Family::BrokenPower => "broken_power",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "power" => Family::Power,
            "exponential" | "exp" => Family::Exponential,
            "stretched_exp" | "stretched" => Family::StretchedExp,
            "broken_power" | "broken" => Family::BrokenPower,
            _ => return Err(Error::InvalidParam(format!("unknown family {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub params: Vec<f64>,
    /// Root-mean-square residual of natural-log values.
    pub log_rmse: f64,
    pub aic: f64,
    pub n_points: usize,
    /// Per-parameter 95% percentile interval, when bootstrapped.
    pub ci: Option<Vec<(f64, f64)>>,
}

impl FitResult {
    /// Decay exponent of a power fit.
    pub fn alpha(&self) -> Option<f64> {
        (self.family == Family::Power).then(|| self.params[1])
    }

    pub fn predict(&self, w: f64) -> f64 {
        self.log_predict(w).exp()
    }

    /// Natural log of the fitted curve at `w`.
    pub fn log_predict(&self, w: f64) -> f64 {
        let p = &self.params;
        match self.family {
            Family::Power => p[0].ln() - p[1] * w.ln(),
            Family::Exponential => p[0].ln() + w * p[1].ln(),
            Family::StretchedExp => p[0].ln() - (w / p[1]).powf(p[2]),
            Family::BrokenPower => {
                let lk = p[3].ln();
                let lw = w.ln();
                p[0].ln() - p[1] * lw.min(lk) - p[2] * (lw - lk).max(0.0)
            }
        }
    }
}

/// `n·ln(RSS/n) + 2k`. RSS is floored so exact fits stay finite.
pub fn aic(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss / n).max(f64::MIN_POSITIVE).ln() + 2.0 * k as f64
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Least squares `y ≈ X·coef` for a design given row-wise. Returns (coef, rss).
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let k = rows.first()?.len();
    let mut ata = vec![vec![0.0; k]; k];
    let mut aty = vec![0.0; k];
    for (r, &yy) in rows.iter().zip(y) {
        for i in 0..k {
            aty[i] += r[i] * yy;
            for j in 0..k {
                ata[i][j] += r[i] * r[j];
            }
        }
    }
    let coef = solve(ata, aty)?;
    let rss = rows
        .iter()
        .zip(y)
        .map(|(r, &yy)| {
            let f: f64 = r.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (yy - f).powi(2)
        })
        .sum();
    Some((coef, rss))
}

/// Ordinary least squares line. Returns (intercept, slope, rss).
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Fit("need at least two paired points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("degenerate abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    Ok((icpt, slope, rss))
}

fn finish(family: Family, params: Vec<f64>, rss: f64, n: usize) -> FitResult {
    FitResult {
        family,
        params,
        log_rmse: (rss / n as f64).sqrt(),
        aic: aic(rss, n, family.n_params()),
        n_points: n,
        ci: None,
    }
}

/// Fits `family` to points `(w, y)` by least squares on `ln y`.
pub fn fit_points(w: &[f64], y: &[f64], family: Family) -> Result<FitResult> {
    if w.len() != y.len() {
        return Err(Error::DimensionMismatch { left: w.len(), right: y.len() });
    }
    if let Some(v) = y.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Fit(format!("non-positive value {v} cannot be fitted in log space")));
    }
    if w.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Fit("abscissae must be positive".into()));
    }
    let n = w.len();
    if n < family.n_params() {
        return Err(Error::Fit(format!("{} points for {} parameters", n, family.n_params())));
    }
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    match family {
        Family::Power => {
            let lx: Vec<f64> = w.iter().map(|v| v.ln()).collect();
            let (a, b, rss) = ols(&lx, &ly)?;
            Ok(finish(family, vec![a.exp(), -b], rss, n))
        }
        Family::Exponential => {
            let (a, b, rss) = ols(w, &ly)?;
            Ok(finish(family, vec![a.exp(), b.exp()], rss, n))
        }
        Family::StretchedExp => fit_stretched(w, &ly),
        Family::BrokenPower => fit_broken(w, &ly),
    }
}

fn stretched_given_beta(w: &[f64], ly: &[f64], beta: f64) -> Option<(f64, f64, f64)> {
    let rows: Vec<Vec<f64>> = w.iter().map(|&x| vec![1.0, -x.powf(beta)]).collect();
    let (c, rss) = least_squares(&rows, ly)?;
    Some((c[0], c[1], rss))
}

fn stretched_rss(w: &[f64], ly: &[f64], a: f64, b: f64, beta: f64) -> f64 {
    w.iter().zip(ly).map(|(&x, &l)| (l - a + b * x.powf(beta)).powi(2)).sum()
}

// Profile over β on a log grid, then Gauss–Newton on (ln C, τ^{-β}, β) until
// the step falls below 1e-10.
fn fit_stretched(w: &[f64], ly: &[f64]) -> Result<FitResult> {
    let n = w.len();
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..=400 {
        let beta = 10f64.powf(-2.5 + 3.0 * i as f64 / 400.0);
        if let Some((a, b, rss)) = stretched_given_beta(w, ly, beta) {
            if best.map_or(true, |bb| rss < bb.3) {
                best = Some((a, b, beta, rss));
            }
        }
    }
    let (mut a, mut b, mut beta, mut rss) = best.ok_or_else(|| Error::Fit("stretched exponential: singular design".into()))?;
    for _ in 0..500 {
        let mut jtj = vec![vec![0.0; 3]; 3];
        let mut jtr = vec![0.0; 3];
        for (&x, &l) in w.iter().zip(ly) {
            let xb = x.powf(beta);
            let r = l - (a - b * xb);
            let j = [1.0, -xb, -b * xb * x.ln()];
            for p in 0..3 {
                jtr[p] += j[p] * r;
                for q in 0..3 {
                    jtj[p][q] += j[p] * j[q];
                }
            }
        }
        let Some(step) = solve(jtj, jtr) else { break };
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let (na, nb, nbeta) = (a + t * step[0], b + t * step[1], beta + t * step[2]);
            if nbeta > 0.0 {
                let nr = stretched_rss(w, ly, na, nb, nbeta);
                if nr <= rss {
                    a = na;
                    b = nb;
                    beta = nbeta;
                    rss = nr;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        let size = step.iter().map(|s| (s * t).abs()).fold(0.0, f64::max);
        if !accepted || size < 1e-10 {
            break;
        }
    }
    let tau = if b > 0.0 { b.powf(-1.0 / beta) } else { f64::INFINITY };
    Ok(finish(Family::StretchedExp, vec![a.exp(), tau, beta], rss, n))
}

// Knot searched over interior abscissae; ties go to the smaller knot.
fn fit_broken(w: &[f64], ly: &[f64]) -> Result<FitResult> {
    let n = w.len();
    let mut knots: Vec<f64> = w.to_vec();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    if knots.len() < 3 {
        return Err(Error::Fit("broken power law needs an interior knot".into()));
    }
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    for &k in &knots[1..knots.len() - 1] {
        let lk = k.ln();
        let rows: Vec<Vec<f64>> = w
            .iter()
            .map(|&x| {
                let lx = x.ln();
                vec![1.0, -lx.min(lk), -(lx - lk).max(0.0)]
            })
            .collect();
        if let Some((c, rss)) = least_squares(&rows, ly) {
            // RSS within rounding of the incumbent counts as a tie.
            if best.as_ref().map_or(true, |b| rss < b.1 - 1e-12 * (1.0 + b.1)) {
                best = Some((c, rss, k));
            }
        }
    }
    let (c, rss, k) = best.ok_or_else(|| Error::Fit("broken power law: singular design".into()))?;
    Ok(finish(Family::BrokenPower, vec![c[0].exp(), c[1], c[2], k], rss, n))
}

/// Fits the aggregate of a curve.
pub fn fit(curve: &TruncationCurve, family: Family) -> Result<FitResult> {
    let x: Vec<f64> = curve.grid().iter().map(|&g| g as f64).collect();
    fit_points(&x, &curve.aggregate_values(), family)
}

/// All four families ranked by ascending AIC.
pub fn model_select(curve: &TruncationCurve) -> Result<Vec<FitResult>> {
    if curve.grid().len() < 5 {
        return Err(Error::Fit("model selection needs at least 5 grid points".into()));
    }
    let mut fits = Family::ALL.iter().map(|&f| fit(curve, f)).collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    Ok(fits)
}

/// Percentile of sorted data with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Point fit plus 95% percentile intervals from `n_resamples` prefix resamples.
///
/// Intervals are widened to contain the point estimate when resampling
/// skews them past it.
pub fn bootstrap_ci(curve: &TruncationCurve, family: Family, n_resamples: usize, seed: u64) -> Result<FitResult> {
    let np = curve.n_prefixes();
    if np < 2 {
        return Err(Error::Fit("bootstrap needs at least two prefixes".into()));
    }
    if n_resamples == 0 {
        return Err(Error::InvalidParam("n_resamples must be positive".into()));
    }
    let mut point = fit(curve, family)?;
    let draws: Vec<Vec<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|r| {
            use rand::Rng;
            let mut rng = rng_from(&[seed, r as u64]);
            let idx: Vec<usize> = (0..np).map(|_| rng.gen_range(0..np)).collect();
            fit(&curve.resample(&idx), family).map(|f| f.params)
        })
        .collect::<Result<_>>()?;
    let k = family.n_params();
    let ci = (0..k)
        .map(|j| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            v.sort_by(f64::total_cmp);
            let p = point.params[j];
            (percentile(&v, 0.025).min(p), percentile(&v, 0.975).max(p))
        })
        .collect();
    point.ci = Some(ci);
    Ok(point)
}

/// `α_KL / α_TV` for two power fits.
pub fn exponent_ratio(tv_fit: &FitResult, kl_fit: &FitResult) -> Result<f64> {
    match (tv_fit.alpha(), kl_fit.alpha()) {
        (Some(a), Some(b)) => Ok(b / a),
        _ => Err(Error::InvalidParam("exponent ratio needs two power fits".into())),
    }
}
