//! Cache eviction policies and budget-vs-distortion traces.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::Dist;
use crate::error::{Error, Result};
use crate::rng::{mix, rng_from};
use crate::source::{Scratch, SyntheticSource, Token};
use crate::sweep::{mean, median, Aggregate, Statistic, TruncationCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Full,
    Sliding,
    SinkRecent,
    RandomK,
    HeavyHitter,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] =
        [PolicyKind::Full, PolicyKind::Sliding, PolicyKind::SinkRecent, PolicyKind::RandomK, PolicyKind::HeavyHitter];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Full => "full",
            PolicyKind::Sliding => "sliding",
            PolicyKind::SinkRecent => "sink_recent",
            PolicyKind::RandomK => "random_k",
            PolicyKind::HeavyHitter => "heavy_hitter",
        }
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown policy {s:?}")))
    }
}

pub const DEFAULT_SINKS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub budget_k: usize,
    #[serde(default = "default_sinks")]
    pub n_sinks: usize,
}

fn default_sinks() -> usize {
    DEFAULT_SINKS
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, budget_k: usize) -> Result<Self> {
        Self::with_sinks(kind, budget_k, DEFAULT_SINKS)
    }

    pub fn with_sinks(kind: PolicyKind, budget_k: usize, n_sinks: usize) -> Result<Self> {
        if budget_k < 1 {
            return Err(Error::InvalidParam("budget must be at least 1".into()));
        }
        if kind == PolicyKind::SinkRecent && budget_k < n_sinks + 1 {
            return Err(Error::InvalidParam(format!("sink_recent needs budget ≥ {} for {n_sinks} sinks", n_sinks + 1)));
        }
        if kind == PolicyKind::HeavyHitter && budget_k < 2 {
            return Err(Error::InvalidParam("heavy_hitter keeps the anchor and the last token, so budget ≥ 2".into()));
        }
        Ok(Self { kind, budget_k, n_sinks })
    }
}

/// Retained positions in ascending order.
///
/// `scores` is required for the heavy-hitter policy: one value per position.
/// Position 0 (the anchor) and the last position are always kept; remaining
/// slots go to the highest scores, ties toward more recent positions.
pub fn retained_set(policy: &PolicySpec, prefix_len: usize, seed: u64, scores: Option<&[f64]>) -> Result<Vec<usize>> {
    let k = policy.budget_k;
    if policy.kind != PolicyKind::Full && k > prefix_len {
        return Err(Error::Precondition(format!("budget {k} exceeds prefix length {prefix_len}")));
    }
    Ok(match policy.kind {
        PolicyKind::Full => (0..prefix_len).collect(),
        PolicyKind::Sliding => (prefix_len - k..prefix_len).collect(),
        PolicyKind::SinkRecent => {
            let recent = k - policy.n_sinks;
            (0..policy.n_sinks).chain(prefix_len - recent..prefix_len).collect()
        }
        PolicyKind::RandomK => {
            let mut rng = rng_from(&[seed, prefix_len as u64, k as u64]);
            let mut v = sample(&mut rng, prefix_len, k).into_vec();
            v.sort_unstable();
            v
        }
        PolicyKind::HeavyHitter => {
            let s = scores.ok_or_else(|| Error::Precondition("heavy_hitter needs per-position scores".into()))?;
            if s.len() != prefix_len {
                return Err(Error::DimensionMismatch { left: s.len(), right: prefix_len });
            }
            let last = prefix_len - 1;
            let mut cand: Vec<usize> = (1..last).collect();
            cand.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(b.cmp(&a)));
            let mut v: Vec<usize> = vec![0];
            if last > 0 {
                v.push(last);
            }
            v.extend(cand.into_iter().take(k.saturating_sub(v.len())));
            v.sort_unstable();
            v
        }
    })
}

/// Posterior over which earlier position the most recent token was copied
/// from, used as the synthetic analogue of attention mass. Entry `j` is
/// `P(ℓ)·[(1−η)·1{x_j = x_last} + η/V]` with `ℓ = last − j`; the last position
/// itself scores 0 (it is always retained).
pub fn lag_posterior_scores(src: &SyntheticSource, history: &[Token]) -> Vec<f64> {
    let t = history.len();
    let mut s = vec![0.0; t];
    if t < 2 {
        return s;
    }
    let last = t - 1;
    let x = history[last];
    let eta = src.eta();
    let noise = eta / src.vocab() as f64;
    let pmf = src.lag_pmf();
    for lag in 1..=last.min(src.l_max()) {
        let j = last - lag;
        let hit = if history[j] == x { 1.0 - eta } else { 0.0 };
        s[j] = pmf[lag - 1] * (hit + noise);
    }
    let z: f64 = s.iter().sum();
    if z > 0.0 {
        s.iter_mut().for_each(|v| *v /= z);
    }
    s
}

fn retained_for_source(src: &SyntheticSource, history: &[Token], policy: &PolicySpec, seed: u64) -> Result<Vec<usize>> {
    let scores = (policy.kind == PolicyKind::HeavyHitter).then(|| lag_posterior_scores(src, history));
    retained_set(policy, history.len(), seed, scores.as_deref())
}

/// Conditional that treats evicted positions as unknown.
pub fn policy_conditional(src: &SyntheticSource, history: &[Token], policy: &PolicySpec, seed: u64) -> Result<Dist> {
    let keep = retained_for_source(src, history, policy, seed)?;
    let mut mask = vec![false; history.len()];
    keep.iter().for_each(|&i| mask[i] = true);
    src.conditional_with(history, |p| mask[p])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTrace {
    pub policy: PolicyKind,
    pub n_sinks: usize,
    pub budgets: Vec<usize>,
    pub median_kl: Vec<f64>,
    pub mean_kl: Vec<f64>,
    pub mean_nll_delta: Vec<f64>,
    /// KL per (prefix, budget) when the trace came from raw rows.
    #[serde(default)]
    pub per_prefix_kl: Vec<Vec<f64>>,
}

impl PolicyTrace {
    /// Builds a trace from per-prefix KL and NLL-increase rows.
    pub fn from_rows(
        policy: PolicyKind,
        n_sinks: usize,
        budgets: Vec<usize>,
        kl_rows: Vec<Vec<f64>>,
        nll_rows: &[Vec<f64>],
    ) -> Result<Self> {
        if kl_rows.is_empty() {
            return Err(Error::Empty(format!("no rows for policy {}", policy.name())));
        }
        let col = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
        let nb = budgets.len();
        let median_kl = (0..nb).map(|j| median(&col(&kl_rows, j))).collect();
        let mean_kl = (0..nb).map(|j| mean(&col(&kl_rows, j))).collect();
        let mean_nll_delta =
            (0..nb).map(|j| if nll_rows.is_empty() { f64::NAN } else { mean(&col(nll_rows, j)) }).collect();
        Ok(Self { policy, n_sinks, budgets, median_kl, mean_kl, mean_nll_delta, per_prefix_kl: kl_rows })
    }

    pub fn median_at(&self, k: usize) -> Result<f64> {
        self.budgets
            .iter()
            .position(|&b| b == k)
            .map(|j| self.median_kl[j])
            .ok_or_else(|| Error::Precondition(format!("budget {k} missing from {} trace", self.policy.name())))
    }

    /// The per-prefix KL rows as a curve over budgets, median-aggregated.
    pub fn kl_curve(&self) -> Result<TruncationCurve> {
        let rows = if self.per_prefix_kl.is_empty() { vec![self.median_kl.clone()] } else { self.per_prefix_kl.clone() };
        TruncationCurve::new(self.budgets.clone(), rows, Statistic::Kl, Aggregate::Median)
    }
}

/// Median-KL ratio `b / a` at budget `k`.
pub fn summarize_ratio(trace_a: &PolicyTrace, trace_b: &PolicyTrace, k: usize) -> Result<f64> {
    Ok(trace_b.median_at(k)? / trace_a.median_at(k)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradeConfig {
    pub policies: Vec<PolicyKind>,
    pub budgets: Vec<usize>,
    pub n_prefixes: usize,
    pub prefix_len: usize,
    #[serde(default = "default_sinks")]
    pub n_sinks: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Per-policy traces on a synthetic source. Each prefix is sampled with one
/// extra token, which serves as the realized next token for the NLL increase.
pub fn degrade_sweep(src: &SyntheticSource, cfg: &DegradeConfig) -> Result<Vec<PolicyTrace>> {
    if cfg.policies.is_empty() || cfg.budgets.is_empty() || cfg.n_prefixes == 0 {
        return Err(Error::Empty("policies, budgets and prefixes must be non-empty".into()));
    }
    if let Some(&b) = cfg.budgets.iter().find(|&&b| b > cfg.prefix_len) {
        return Err(Error::Precondition(format!("budget {b} exceeds prefix length {}", cfg.prefix_len)));
    }
    let specs: Vec<Vec<PolicySpec>> = cfg
        .policies
        .iter()
        .map(|&p| cfg.budgets.iter().map(|&k| PolicySpec::with_sinks(p, k, cfg.n_sinks)).collect())
        .collect::<Result<_>>()?;
    // rows[prefix][policy][budget] = (kl, nll_delta)
    let rows: Vec<Vec<Vec<(f64, f64)>>> = (0..cfg.n_prefixes)
        .into_par_iter()
        .map_init(Scratch::new, |scratch, i| {
            let seq = src.sample_prefix(cfg.prefix_len + 1, cfg.seed.wrapping_add(i as u64));
            let (hist, next) = seq.split_at(cfg.prefix_len);
            let mut mask = vec![false; cfg.prefix_len];
            specs
                .iter()
                .map(|per_budget| {
                    per_budget
                        .iter()
                        .map(|spec| {
                            let keep = retained_for_source(src, hist, spec, mix(&[cfg.seed, i as u64]))?;
                            mask.iter_mut().for_each(|m| *m = false);
                            keep.iter().for_each(|&p| mask[p] = true);
                            let d = src.divergence_with(hist, |p| mask[p], Some(next[0]), scratch)?;
                            Ok((d.kl, d.nll_delta.unwrap_or(0.0)))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    cfg.policies
        .iter()
        .enumerate()
        .map(|(pi, &p)| {
            let kl: Vec<Vec<f64>> = rows.iter().map(|r| r[pi].iter().map(|x| x.0).collect()).collect();
            let nll: Vec<Vec<f64>> = rows.iter().map(|r| r[pi].iter().map(|x| x.1).collect()).collect();
            PolicyTrace::from_rows(p, cfg.n_sinks, cfg.budgets.clone(), kl, &nll)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::SourceSpec;

    #[test]
    fn retained_set_examples() {
        let sl = PolicySpec::new(PolicyKind::Sliding, 3).unwrap();
        assert_eq!(retained_set(&sl, 10, 0, None).unwrap(), vec![7, 8, 9]);
        let sr = PolicySpec::new(PolicyKind::SinkRecent, 5).unwrap();
        assert_eq!(retained_set(&sr, 10, 0, None).unwrap(), vec![0, 1, 2, 3, 9]);
        let rk = PolicySpec::new(PolicyKind::RandomK, 6).unwrap();
        let a = retained_set(&rk, 100, 42, None).unwrap();
        assert_eq!(a, retained_set(&rk, 100, 42, None).unwrap());
        assert_eq!(a.len(), 6);
        assert!(a.windows(2).all(|p| p[0] < p[1]));
        let full = PolicySpec::new(PolicyKind::Full, 1).unwrap();
        assert_eq!(retained_set(&full, 4, 0, None).unwrap(), vec![0, 1, 2, 3]);
        assert!(retained_set(&sl, 2, 0, None).is_err());
    }

    #[test]
    fn heavy_hitter_keeps_anchor_and_last() {
        let hh = PolicySpec::new(PolicyKind::HeavyHitter, 4).unwrap();
        let scores = [0.0, 0.1, 0.9, 0.5, 0.5, 0.0, 0.0];
        assert_eq!(retained_set(&hh, 7, 0, Some(&scores)).unwrap(), vec![0, 2, 4, 6]);
        assert!(retained_set(&hh, 7, 0, None).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(PolicySpec::new(PolicyKind::SinkRecent, 4).is_err());
        assert!(PolicySpec::new(PolicyKind::Sliding, 0).is_err());
        assert!(PolicySpec::new(PolicyKind::HeavyHitter, 1).is_err());
    }

    #[test]
    fn conditional_equivalences() {
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 8, 64, 0.3, 0)).unwrap();
        let h = s.sample_prefix(100, 1);
        let full = PolicySpec::new(PolicyKind::Full, 100).unwrap();
        assert_eq!(policy_conditional(&s, &h, &full, 0).unwrap(), s.full_conditional(&h).unwrap());
        for w in [1, 5, 17] {
            let sl = PolicySpec::new(PolicyKind::Sliding, w).unwrap();
            assert_eq!(policy_conditional(&s, &h, &sl, 0).unwrap(), s.truncated_conditional(&h, w).unwrap());
        }
        let noise = SyntheticSource::new(SourceSpec::power_lag(0.5, 8, 64, 1.0, 0)).unwrap();
        let rk = PolicySpec::new(PolicyKind::RandomK, 10).unwrap();
        let q = policy_conditional(&noise, &h, &rk, 3).unwrap();
        assert!(q.probs().iter().all(|&x| (x - 0.125).abs() < 1e-15));
    }

    #[test]
    fn full_policy_kl_is_zero() {
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 8, 64, 0.3, 0)).unwrap();
        let cfg = DegradeConfig {
            policies: vec![PolicyKind::Full],
            budgets: vec![8, 16],
            n_prefixes: 10,
            prefix_len: 128,
            n_sinks: 4,
            seed: 0,
        };
        let t = degrade_sweep(&s, &cfg).unwrap();
        assert!(t[0].median_kl.iter().chain(&t[0].mean_kl).all(|&x| x == 0.0));
        assert!(t[0].mean_nll_delta.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ratio_examples() {
        let mk = |v: Vec<f64>| PolicyTrace {
            policy: PolicyKind::Sliding,
            n_sinks: 4,
            budgets: vec![8, 64, 512],
            median_kl: v.clone(),
            mean_kl: v,
            mean_nll_delta: vec![0.0; 3],
            per_prefix_kl: vec![],
        };
        let a = mk(vec![3.0, 0.30, 0.040]);
        let b = mk(vec![5.587, 4.330, 3.365]);
        assert!((summarize_ratio(&a, &b, 512).unwrap() - 84.125).abs() < 1e-9);
        assert_eq!(summarize_ratio(&a, &a, 64).unwrap(), 1.0);
        assert!(summarize_ratio(&a, &b, 32).is_err());
    }

    #[test]
    fn lag_posterior_normalized() {
        let s = SyntheticSource::new(SourceSpec::power_lag(0.5, 4, 16, 0.3, 0)).unwrap();
        let h = s.sample_prefix(40, 2);
        let sc = lag_posterior_scores(&s, &h);
        assert!((sc.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(sc[39], 0.0);
        assert!(sc[..39 - 16].iter().all(|&x| x == 0.0));
    }
}
