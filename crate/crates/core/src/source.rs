//! Synthetic copy sources with an exactly computable truncation profile.
//!
//! The next token is uniform with probability `η`; otherwise it copies the
//! token `ℓ` positions back, where the lag `ℓ` has pmf `∝ ℓ^{-(α+1)}`
//! (power lag) or `∝ ρ^ℓ` (geometric lag) on `1..=L_max`. A lag that points
//! before the start of the history, or at a position the reader does not
//! know, contributes the uniform marginal instead.

use rand::Rng as _;
use rand_distr::{Distribution, WeightedAliasIndex};
use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LagProfile {
    PowerLag { alpha: f64 },
    GeometricLag { rho: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    #[serde(flatten)]
    pub profile: LagProfile,
    pub vocab: usize,
    pub l_max: usize,
    pub eta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SourceSpec {
    pub fn power_lag(alpha: f64, vocab: usize, l_max: usize, eta: f64, seed: u64) -> Self {
        Self { profile: LagProfile::PowerLag { alpha }, vocab, l_max, eta, seed }
    }

    pub fn geometric_lag(rho: f64, vocab: usize, l_max: usize, eta: f64, seed: u64) -> Self {
        Self { profile: LagProfile::GeometricLag { rho }, vocab, l_max, eta, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match self.profile {
            LagProfile::PowerLag { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                return Err(Error::InvalidParam(format!("alpha = {alpha} must be positive")))
            }
            LagProfile::GeometricLag { rho } if !(rho > 0.0 && rho < 1.0) => {
                return Err(Error::InvalidParam(format!("rho = {rho} not in (0,1)")))
            }
            _ => {}
        }
        if self.vocab < 2 {
            return Err(Error::InvalidParam("vocabulary needs at least 2 tokens".into()));
        }
        if self.vocab > u32::MAX as usize {
            return Err(Error::InvalidParam("vocabulary too large".into()));
        }
        if self.l_max < 1 {
            return Err(Error::InvalidParam("l_max must be at least 1".into()));
        }
        // The endpoints are accepted for the pure-copy and pure-noise limits.
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParam(format!("eta = {} not in [0,1]", self.eta)));
        }
        Ok(())
    }
}

/// TV and KL between the full conditional and a reduced-knowledge conditional,
/// plus the NLL increase of a realized next token when one is supplied.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Divergence {
    pub tv: f64,
    pub kl: f64,
    pub nll_delta: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticSource {
    spec: SourceSpec,
    lag_pmf: Vec<f64>,
    // tail[w] = Σ_{ℓ > w} pmf(ℓ) for w in 0..=L_max
    tail: Vec<f64>,
    lags: WeightedAliasIndex<f64>,
}

impl SyntheticSource {
    pub fn new(spec: SourceSpec) -> Result<Self> {
        spec.validate()?;
        let l = spec.l_max;
        let mut w: Vec<f64> = match spec.profile {
            LagProfile::PowerLag { alpha } => (1..=l).map(|k| (k as f64).powf(-(alpha + 1.0))).collect(),
            // ρ^{ℓ-1} keeps the first weight at 1 so underflow starts as late as possible.
            LagProfile::GeometricLag { rho } => (1..=l).map(|k| rho.powi(k as i32 - 1)).collect(),
        };
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParam(format!("lag weights underflow at l_max = {l}; use a smaller l_max")));
        }
        let z: f64 = w.iter().rev().sum();
        w.iter_mut().for_each(|x| *x /= z);
        let mut tail = vec![0.0; l + 1];
        for k in (0..l).rev() {
            tail[k] = tail[k + 1] + w[k];
        }
        let lags = WeightedAliasIndex::new(w.clone()).map_err(|e| Error::InvalidParam(format!("lag weights: {e}")))?;
        Ok(Self { spec, lag_pmf: w, tail, lags })
    }

    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    pub fn vocab(&self) -> usize {
        self.spec.vocab
    }

    pub fn l_max(&self) -> usize {
        self.spec.l_max
    }

    pub fn eta(&self) -> f64 {
        self.spec.eta
    }

    /// `P(L = ℓ)` stored at index `ℓ − 1`.
    pub fn lag_pmf(&self) -> &[f64] {
        &self.lag_pmf
    }

    /// `Σ_{ℓ > w} P(L = ℓ)`.
    pub fn tail(&self, w: usize) -> f64 {
        self.tail[w.min(self.spec.l_max)]
    }

    /// `(1 − η)(1 − 1/V)·tail(w)`: the largest TV between the full and the
    /// `w`-truncated conditional over all histories.
    pub fn analytic_tv_tail(&self, w: usize) -> f64 {
        (1.0 - self.spec.eta) * (1.0 - 1.0 / self.spec.vocab as f64) * self.tail(w)
    }

    /// Smallest `C` with `analytic_tv_tail(w) ≤ C·w^{-α}` for every `w ≥ 1`.
    /// For a geometric source, the same for `C·ρ^w`.
    pub fn sensitivity_constant(&self) -> f64 {
        let scale = |w: usize| match self.spec.profile {
            LagProfile::PowerLag { alpha } => (w as f64).powf(alpha),
            LagProfile::GeometricLag { rho } => rho.powi(-(w as i32)),
        };
        (1..self.spec.l_max)
            .map(|w| self.analytic_tv_tail(w) * scale(w))
            .fold(0.0, f64::max)
    }

    /// Decay exponent of a power-lag source.
    pub fn alpha(&self) -> Option<f64> {
        match self.spec.profile {
            LagProfile::PowerLag { alpha } => Some(alpha),
            LagProfile::GeometricLag { .. } => None,
        }
    }

    /// Conditional given the positions of `history` for which `known(pos)` holds.
    pub fn conditional_with(&self, history: &[Token], known: impl Fn(usize) -> bool) -> Result<Dist> {
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let v = self.spec.vocab;
        let eta = self.spec.eta;
        let t = history.len();
        let mut probs = vec![0.0; v];
        let mut unknown = self.tail(t);
        for lag in 1..=t.min(self.spec.l_max) {
            let pos = t - lag;
            let p = self.lag_pmf[lag - 1];
            if known(pos) {
                probs[history[pos] as usize] += (1.0 - eta) * p;
            } else {
                unknown += p;
            }
        }
        let u = eta / v as f64 + (1.0 - eta) * unknown / v as f64;
        probs.iter_mut().for_each(|x| *x += u);
        Ok(Dist::from_raw(probs))
    }

    pub fn full_conditional(&self, history: &[Token]) -> Result<Dist> {
        self.conditional_with(history, |_| true)
    }

    pub fn truncated_conditional(&self, history: &[Token], w: usize) -> Result<Dist> {
        if w == 0 {
            return Err(Error::InvalidParam("window must be at least 1".into()));
        }
        let t = history.len();
        self.conditional_with(history, |pos| t - pos <= w)
    }

    /// Samples `length` tokens autoregressively. Deterministic in `(spec.seed, seed)`.
    pub fn sample_prefix(&self, length: usize, seed: u64) -> Vec<Token> {
        let mut rng = rng_from(&[self.spec.seed, seed]);
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let x = self.sample_next(&out, &mut rng);
            out.push(x);
        }
        out
    }

    /// Draws one token from the full conditional given `history`.
    pub fn sample_next(&self, history: &[Token], rng: &mut Rng) -> Token {
        let v = self.spec.vocab as u32;
        if rng.gen::<f64>() < self.spec.eta {
            return rng.gen_range(0..v);
        }
        let lag = self.sample_lag(rng);
        if lag <= history.len() {
            history[history.len() - lag]
        } else {
            rng.gen_range(0..v)
        }
    }

    pub(crate) fn sample_lag(&self, rng: &mut Rng) -> usize {
        self.lags.sample(rng) + 1
    }

    /// Divergences of every truncation in `windows` from the full conditional.
    /// Output order follows `windows`.
    pub fn window_divergences(
        &self,
        history: &[Token],
        windows: &[usize],
        next: Option<Token>,
        scratch: &mut Scratch,
    ) -> Result<Vec<Divergence>> {
        self.each_window(history, windows, scratch, |s, c| s.divergence(c, next))
    }

    /// TV only; skips the logarithms of the KL term.
    pub fn window_tv_profile(&self, history: &[Token], windows: &[usize], scratch: &mut Scratch) -> Result<Vec<f64>> {
        self.each_window(history, windows, scratch, |s, _| s.tv())
    }

    fn each_window<T: Default + Clone>(
        &self,
        history: &[Token],
        windows: &[usize],
        scratch: &mut Scratch,
        eval: impl Fn(&Scratch, f64) -> T,
    ) -> Result<Vec<T>> {
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let t = history.len();
        let top = t.min(self.spec.l_max);
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.sort_by(|&a, &b| windows[b].cmp(&windows[a]));
        scratch.reset(self.spec.vocab);
        let eta = self.spec.eta;
        for lag in 1..=top {
            scratch.add_known(history[t - lag], (1.0 - eta) * self.lag_pmf[lag - 1]);
        }
        let mut out = vec![T::default(); windows.len()];
        let mut moved = top;
        for &i in &order {
            let w = windows[i].max(1).min(top);
            while moved > w {
                let p = (1.0 - eta) * self.lag_pmf[moved - 1];
                scratch.move_to_unknown(history[t - moved], p);
                moved -= 1;
            }
            out[i] = eval(scratch, self.base_uniform(t));
        }
        scratch.clear();
        Ok(out)
    }

    /// Divergence of the conditional that only knows positions with `known(pos)`.
    pub fn divergence_with(
        &self,
        history: &[Token],
        known: impl Fn(usize) -> bool,
        next: Option<Token>,
        scratch: &mut Scratch,
    ) -> Result<Divergence> {
        if history.is_empty() {
            return Err(Error::EmptyHistory);
        }
        let t = history.len();
        let eta = self.spec.eta;
        scratch.reset(self.spec.vocab);
        for lag in 1..=t.min(self.spec.l_max) {
            let pos = t - lag;
            let p = (1.0 - eta) * self.lag_pmf[lag - 1];
            if known(pos) {
                scratch.add_known(history[pos], p);
            } else {
                scratch.add_unknown(history[pos], p);
            }
        }
        let d = scratch.divergence(self.base_uniform(t), next);
        scratch.clear();
        Ok(d)
    }

    // Uniform mass per token shared by every conditional at history length t.
    fn base_uniform(&self, t: usize) -> f64 {
        let v = self.spec.vocab as f64;
        self.spec.eta / v + (1.0 - self.spec.eta) * self.tail(t) / v
    }
}

/// Sparse accumulators for the point-mass parts of two lag mixtures.
///
/// `known[x]` holds copy mass both conditionals share; `unknown[x]` holds copy
/// mass the full conditional has but the reduced one spreads uniformly.
#[derive(Debug, Default)]
pub struct Scratch {
    known: Vec<f64>,
    unknown: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<u32>,
    unknown_mass: f64,
}

impl Scratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn reset(&mut self, v: usize) {
        if self.known.len() != v {
            self.known = vec![0.0; v];
            self.unknown = vec![0.0; v];
            self.seen = vec![false; v];
            self.touched.clear();
        }
        self.unknown_mass = 0.0;
    }

    fn clear(&mut self) {
        for &x in &self.touched {
            let x = x as usize;
            self.known[x] = 0.0;
            self.unknown[x] = 0.0;
            self.seen[x] = false;
        }
        self.touched.clear();
        self.unknown_mass = 0.0;
    }

    fn touch(&mut self, x: Token) {
        if !self.seen[x as usize] {
            self.seen[x as usize] = true;
            self.touched.push(x);
        }
    }

    fn add_known(&mut self, x: Token, p: f64) {
        self.touch(x);
        self.known[x as usize] += p;
    }

    fn add_unknown(&mut self, x: Token, p: f64) {
        self.touch(x);
        self.unknown[x as usize] += p;
        self.unknown_mass += p;
    }

    fn move_to_unknown(&mut self, x: Token, p: f64) {
        self.known[x as usize] -= p;
        if self.known[x as usize] < 0.0 {
            self.known[x as usize] = 0.0;
        }
        self.unknown[x as usize] += p;
        self.unknown_mass += p;
    }

    fn tv(&self) -> f64 {
        let v = self.known.len();
        let spread = self.unknown_mass / v as f64;
        let untouched = (v - self.touched.len()) as f64;
        let tv: f64 = self.touched.iter().map(|&x| (self.unknown[x as usize] - spread).abs()).sum();
        (0.5 * (tv + untouched * spread)).min(1.0)
    }

    fn divergence(&self, c: f64, next: Option<Token>) -> Divergence {
        let v = self.known.len();
        let spread = self.unknown_mass / v as f64;
        let untouched = (v - self.touched.len()) as f64;
        let mut tv = 0.0;
        let mut kl = 0.0;
        for &x in &self.touched {
            let x = x as usize;
            let f = c + self.known[x] + self.unknown[x];
            let g = c + spread + self.known[x];
            tv += (self.unknown[x] - spread).abs();
            if f > 0.0 {
                kl += f * (f / g).ln();
            }
        }
        tv += untouched * spread;
        if c > 0.0 && spread > 0.0 {
            kl += untouched * c * (c / (c + spread)).ln();
        }
        let nll_delta = next.map(|x| {
            let x = x as usize;
            let f = c + self.known[x] + self.unknown[x];
            let g = c + spread + self.known[x];
            f.ln() - g.ln()
        });
        Divergence { tv: (0.5 * tv).min(1.0), kl: kl.max(0.0), nll_delta }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{kl, tv};

    fn two_lag(eta: f64) -> SyntheticSource {
        // lag pmf (1/2, 1/2) is the α → 0 limit; build it by hand.
        let mut s = SyntheticSource::new(SourceSpec::power_lag(1.0, 2, 2, eta, 0)).unwrap();
        s.lag_pmf = vec![0.5, 0.5];
        s.tail = vec![1.0, 0.5, 0.0];
        s.lags = WeightedAliasIndex::new(vec![0.5, 0.5]).unwrap();
        s
    }

    #[test]
    fn full_conditional_single_lag() {
        let s = SyntheticSource::new(SourceSpec::power_lag(1.0, 2, 1, 0.5, 0)).unwrap();
        assert_eq!(s.lag_pmf(), &[1.0]);
        let p = s.full_conditional(&[0]).unwrap();
        assert_eq!(p.probs(), &[0.75, 0.25]);
        assert!(matches!(s.full_conditional(&[]), Err(Error::EmptyHistory)));
    }

    #[test]
    fn pure_noise_is_uniform() {
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 5, 16, 1.0, 0)).unwrap();
        let p = s.full_conditional(&[1, 2, 3, 4, 0, 0]).unwrap();
        for x in p.probs() {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn lags_beyond_history_marginalize() {
        // degenerate lag at 3: build a pmf with all mass there
        let mut s = SyntheticSource::new(SourceSpec::power_lag(1.0, 3, 3, 0.2, 0)).unwrap();
        s.lag_pmf = vec![0.0, 0.0, 1.0];
        s.tail = vec![1.0, 1.0, 1.0, 0.0];
        let p = s.full_conditional(&[2, 1]).unwrap();
        for x in p.probs() {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn truncated_two_lag_example() {
        let s = two_lag(0.5);
        // history [1, 0], most recent token 0; w = 1 keeps lag 1 only.
        let q = s.truncated_conditional(&[1, 0], 1).unwrap();
        // 0.25 uniform noise + 0.5·0.5 copy of token 0 + 0.5·0.5 spread uniformly
        let want = [0.25 + 0.25 + 0.125, 0.25 + 0.125];
        assert!((q.probs()[0] - want[0]).abs() < 1e-15);
        assert!((q.probs()[1] - want[1]).abs() < 1e-15);
        let p = s.full_conditional(&[1, 0]).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 1e-15);
        assert!((tv(&p, &q).unwrap() - s.analytic_tv_tail(1)).abs() < 1e-15);
        assert!((s.analytic_tv_tail(1) - 0.125).abs() < 1e-15);
        assert!(s.truncated_conditional(&[1, 0], 0).is_err());
    }

    #[test]
    fn no_truncation_when_window_covers_lags() {
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 7, 8, 0.3, 1)).unwrap();
        let h = s.sample_prefix(40, 3);
        assert_eq!(s.full_conditional(&h).unwrap(), s.truncated_conditional(&h, 8).unwrap());
        assert_eq!(s.analytic_tv_tail(8), 0.0);
        assert_eq!(s.analytic_tv_tail(100), 0.0);
        let same = vec![4u32; 30];
        let a = s.full_conditional(&same).unwrap();
        let b = s.truncated_conditional(&same, 30).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tail_ratio_power_half() {
        // With the lag cutoff far away the tail ratio is the power-law one.
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 2, 1 << 22, 0.5, 0)).unwrap();
        for w in [32, 64, 128, 256, 512] {
            let r = s.tail(w) / s.tail(2 * w);
            assert!((r / 2f64.sqrt() - 1.0).abs() < 0.02, "w={w} ratio {r}");
        }
        // At L_max = 4096 the cutoff bends the ratio upward; compare against direct sums.
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 2, 4096, 0.5, 0)).unwrap();
        let raw = |w: usize| (w + 1..=4096).map(|l| (l as f64).powf(-1.5)).sum::<f64>();
        for w in [32, 64, 128, 256, 512] {
            let r = s.tail(w) / s.tail(2 * w);
            assert!((r - raw(w) / raw(2 * w)).abs() < 1e-12);
            assert!(r > 2f64.sqrt());
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 11, 64, 0.3, 9)).unwrap();
        assert_eq!(s.sample_prefix(500, 4), s.sample_prefix(500, 4));
        assert_ne!(s.sample_prefix(500, 4), s.sample_prefix(500, 5));
    }

    #[test]
    fn pure_copy_is_constant() {
        let s = SyntheticSource::new(SourceSpec::power_lag(1.0, 2, 1, 0.0, 0)).unwrap();
        for seed in 0..10 {
            let x = s.sample_prefix(200, seed);
            assert!(x.iter().all(|&t| t == x[0]));
        }
    }

    #[test]
    fn pure_noise_unigram_within_binomial_band() {
        let v = 4;
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, v, 32, 1.0, 2)).unwrap();
        let n = 100_000;
        let x = s.sample_prefix(n, 0);
        let mut counts = vec![0usize; v];
        x.iter().for_each(|&t| counts[t as usize] += 1);
        let p = 1.0 / v as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd, "count {c}");
        }
    }

    #[test]
    fn sparse_divergences_match_dense() {
        for (v, eta) in [(3usize, 0.2), (50, 0.5), (2, 0.05)] {
            let s = SyntheticSource::new(SourceSpec::power_lag(0.7, v, 64, eta, 5)).unwrap();
            let mut sc = Scratch::new();
            for seed in 0..5 {
                let h = s.sample_prefix(100, seed);
                let next = s.sample_prefix(101, seed)[100];
                let grid = [1, 2, 4, 8, 16, 32, 64];
                let d = s.window_divergences(&h, &grid, Some(next), &mut sc).unwrap();
                let p = s.full_conditional(&h).unwrap();
                for (i, &w) in grid.iter().enumerate() {
                    let q = s.truncated_conditional(&h, w).unwrap();
                    assert!((d[i].tv - tv(&p, &q).unwrap()).abs() < 1e-12);
                    assert!((d[i].kl - kl(&p, &q).unwrap()).abs() < 1e-12);
                    let nll = q.probs()[next as usize].ln() - p.probs()[next as usize].ln();
                    assert!((d[i].nll_delta.unwrap() - (-nll)).abs() < 1e-12);
                }
                let keep = |pos: usize| pos % 3 == 0;
                let d = s.divergence_with(&h, keep, None, &mut sc).unwrap();
                let q = s.conditional_with(&h, keep).unwrap();
                assert!((d.tv - tv(&p, &q).unwrap()).abs() < 1e-12);
                assert!((d.kl - kl(&p, &q).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spec_roundtrip_json() {
        let spec = SourceSpec::geometric_lag(0.85, 16, 512, 0.3, 7);
        let s = serde_json::to_string(&spec).unwrap();
        assert!(s.contains("geometric_lag"));
        let back: SourceSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSource::new(SourceSpec::power_lag(0.0, 4, 10, 0.3, 0)).is_err());
        assert!(SyntheticSource::new(SourceSpec::power_lag(0.5, 1, 10, 0.3, 0)).is_err());
        assert!(SyntheticSource::new(SourceSpec::geometric_lag(1.2, 4, 10, 0.3, 0)).is_err());
        assert!(SyntheticSource::new(SourceSpec::power_lag(0.5, 4, 0, 0.3, 0)).is_err());
        assert!(SyntheticSource::new(SourceSpec::power_lag(0.5, 4, 10, 1.3, 0)).is_err());
    }
}

/// How histories are drawn in [`suffix_bayes_risk`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistoryLaw {
    /// Independent uniform tokens: older tokens carry no information the suffix has.
    IndependentUniform,
    /// The source's own autoregressive law.
    Source,
}

/// Smallest expected TV to the full conditional achievable by any
/// reconstruction that sees only the last `w` tokens, over histories of
/// length `history_len`. Exhaustive; binary vocabularies only.
///
/// With `V = 2` the TV is `|p(0) − q(0)|`, so the optimal reconstruction
/// for each suffix is a weighted median of `p(0)` over the compatible histories.
pub fn suffix_bayes_risk(src: &SyntheticSource, w: usize, history_len: usize, law: HistoryLaw) -> Result<f64> {
    if src.vocab() != 2 {
        return Err(Error::InvalidParam("exhaustive Bayes risk is implemented for V = 2".into()));
    }
    if w == 0 || w > history_len || history_len > 20 {
        return Err(Error::InvalidParam(format!("need 1 ≤ w ≤ history_len ≤ 20, got w={w}, len={history_len}")));
    }
    let mut groups: std::collections::BTreeMap<u32, Vec<(f64, f64)>> = Default::default();
    for code in 0u32..(1 << history_len) {
        let h: Vec<Token> = (0..history_len).map(|i| (code >> i) & 1).collect();
        let weight = match law {
            HistoryLaw::IndependentUniform => 0.5f64.powi(history_len as i32),
            HistoryLaw::Source => {
                let mut pr = 0.5;
                for i in 1..history_len {
                    pr *= src.full_conditional(&h[..i])?.probs()[h[i] as usize];
                }
                pr
            }
        };
        let p0 = src.full_conditional(&h)?.probs()[0];
        let suffix = code >> (history_len - w);
        groups.entry(suffix).or_default().push((weight, p0));
    }
    let mut risk = 0.0;
    for (_, mut g) in groups {
        g.sort_by(|a, b| a.1.total_cmp(&b.1));
        let total: f64 = g.iter().map(|x| x.0).sum();
        let mut acc = 0.0;
        let mut median = g[g.len() - 1].1;
        for &(wt, v) in &g {
            acc += wt;
            if acc >= total / 2.0 {
                median = v;
                break;
            }
        }
        risk += g.iter().map(|&(wt, v)| wt * (v - median).abs()).sum::<f64>();
    }
    Ok(risk)
}
