//! Desk-scale block-Markov Wyner–Ziv coding over tiny alphabets.
//!
//! Three layers:
//! * a Blahut–Arimoto solver for the classical `R(D)` reference curve,
//! * the block coder itself (random codebooks, binning, strong typicality with
//!   exact integer count bounds), plus exact failure probabilities of the
//!   covering and packing steps for i.i.d. codebooks,
//! * [`run_achievability`], which drives the coder over a synthetic source with
//!   window `w_n = ⌈n^{1/(α+1)}⌉` and smoothed reconstruction.

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{kl, smooth, Dist};
use crate::error::{Error, Result};
use crate::rng::{mix, rng_from, Rng};
use crate::source::{SyntheticSource, Token};
use crate::window::{achievability_window, ceil_tol};

/// Hard caps for desk-scale runs.
pub const MAX_VOCAB: usize = 8;
pub const MAX_BLOCK: usize = 16;
pub const MAX_N: usize = 1 << 14;

pub const BA_TOL: f64 = 1e-10;
pub const BA_MAX_ITER: usize = 100_000;
const BA_PRUNE: f64 = 1e-4;
const BA_MAX_PRUNES: u32 = 3;

// ---------------------------------------------------------------------------
// Rate–distortion reference

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub distortion: f64,
    pub rate_bits: f64,
    /// Lagrange slope `s` of the Blahut–Arimoto iteration (0 on the flat part).
    pub slope: f64,
}

pub fn hamming(v: usize) -> Vec<Vec<f64>> {
    (0..v).map(|i| (0..v).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect()
}

fn check_rd_inputs(p: &[f64], d: &[Vec<f64>]) -> Result<usize> {
    Dist::new(p.to_vec())?;
    if d.len() != p.len() {
        return Err(Error::DimensionMismatch { left: p.len(), right: d.len() });
    }
    let ny = d.first().map(|r| r.len()).unwrap_or(0);
    if ny == 0 || d.iter().any(|r| r.len() != ny) {
        return Err(Error::InvalidParam("distortion matrix must be rectangular and non-empty".into()));
    }
    if d.iter().flatten().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParam("distortions must be finite and non-negative".into()));
    }
    Ok(ny)
}

/// One Blahut–Arimoto solve at slope `s`.
pub fn blahut_arimoto(p: &[f64], d: &[Vec<f64>], s: f64) -> Result<RdPoint> {
    let ny = check_rd_inputs(p, d)?;
    if !(s >= 0.0) {
        return Err(Error::InvalidParam(format!("slope must be non-negative, got {s}")));
    }
    // Row-shifted kernel so that large s never underflows a whole row.
    let a: Vec<Vec<f64>> = d
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::INFINITY, f64::min);
            row.iter().map(|&x| (-s * (x - m)).exp()).collect()
        })
        .collect();
    let mut q = vec![1.0 / ny as f64; ny];
    let mut next = vec![0.0; ny];
    let mut c = vec![0.0; ny];
    let mut pruned = vec![0u32; ny];
    for _ in 0..BA_MAX_ITER {
        c.iter_mut().for_each(|x| *x = 0.0);
        for (px, ax) in p.iter().zip(&a) {
            if *px == 0.0 {
                continue;
            }
            let z: f64 = q.iter().zip(ax).map(|(qy, ay)| qy * ay).sum();
            for y in 0..ny {
                c[y] += px * ax[y] / z;
            }
        }
        // Blahut's stopping rule: the rate at this slope lies within
        // ln max_y c_y − Σ q'_y ln c_y of the current iterate's.
        let (mut c_max, mut avg) = (0.0f64, 0.0);
        for y in 0..ny {
            c_max = c_max.max(c[y]);
            next[y] = q[y] * c[y];
            if next[y] > 0.0 {
                avg += next[y] * c[y].ln();
            }
        }
        let gap = c_max.ln() - avg;
        // Outputs leaving the support decay only like 1/k; drop them once they
        // are negligible and bring them back if the optimality test asks.
        let mut changed = false;
        for y in 0..ny {
            if next[y] > 0.0 && next[y] < BA_PRUNE && c[y] < 1.0 && pruned[y] < BA_MAX_PRUNES {
                next[y] = 0.0;
                pruned[y] += 1;
                changed = true;
            } else if next[y] == 0.0 && c[y] > 1.0 + BA_TOL {
                next[y] = 10.0 * BA_PRUNE;
                changed = true;
            }
        }
        if changed {
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= total);
        }
        std::mem::swap(&mut q, &mut next);
        if gap < BA_TOL && !changed {
            let (mut dist, mut rate) = (0.0, 0.0);
            for ((px, ax), dx) in p.iter().zip(&a).zip(d) {
                if *px == 0.0 {
                    continue;
                }
                let z: f64 = q.iter().zip(ax).map(|(qy, ay)| qy * ay).sum();
                for y in 0..ny {
                    let cond = q[y] * ax[y] / z;
                    if cond > 0.0 {
                        dist += px * cond * dx[y];
                        rate += px * cond * (cond / q[y]).log2();
                    }
                }
            }
            return Ok(RdPoint { distortion: dist, rate_bits: rate.max(0.0), slope: s });
        }
    }
    Err(Error::NoConvergence(BA_MAX_ITER))
}

/// `R(D)` at each target distortion.
pub fn rd_reference(p: &[f64], d: &[Vec<f64>], targets: &[f64]) -> Result<Vec<RdPoint>> {
    let ny = check_rd_inputs(p, d)?;
    let d_max = (0..ny)
        .map(|y| p.iter().zip(d).map(|(px, row)| px * row[y]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let d_min: f64 = p.iter().zip(d).map(|(px, row)| px * row.iter().cloned().fold(f64::INFINITY, f64::min)).sum();
    let min_gap = d
        .iter()
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::INFINITY, f64::min);
            row.iter().map(move |&x| x - m).filter(|&g| g > 0.0)
        })
        .fold(f64::INFINITY, f64::min);
    let s_limit = if min_gap.is_finite() { 700.0 / min_gap } else { 1.0 };
    targets
        .iter()
        .map(|&target| {
            if !(target >= 0.0) {
                return Err(Error::InvalidParam(format!("target distortion must be ≥ 0, got {target}")));
            }
            if target >= d_max - 1e-12 {
                return Ok(RdPoint { distortion: target, rate_bits: 0.0, slope: 0.0 });
            }
            if target < d_min - 1e-12 {
                return Err(Error::InvalidParam(format!("target {target} below the minimum distortion {d_min}")));
            }
            if target <= d_min + 1e-12 {
                let pt = blahut_arimoto(p, d, s_limit)?;
                return Ok(RdPoint { distortion: target, ..pt });
            }
            let mut hi = 1.0;
            loop {
                match blahut_arimoto(p, d, hi) {
                    Ok(pt) if pt.distortion <= target => break,
                    Ok(_) | Err(Error::NoConvergence(_)) => {}
                    Err(e) => return Err(e),
                }
                hi *= 2.0;
                if hi > s_limit {
                    hi = s_limit;
                    break;
                }
            }
            let mut lo = 0.0;
            let mut above = blahut_arimoto(p, d, hi)?;
            let mut below: Option<RdPoint> = None;
            for _ in 0..200 {
                // Slopes where an output symbol is about to leave the support
                // converge slowly; step around them inside the bracket.
                let pt = [0.5, 0.25, 0.75, 0.125, 0.875]
                    .iter()
                    .map(|f| blahut_arimoto(p, d, lo + f * (hi - lo)))
                    .find(|r| !matches!(r, Err(Error::NoConvergence(_))))
                    .transpose()?;
                let Some(pt) = pt else { break };
                if pt.distortion > target {
                    lo = pt.slope;
                    below = Some(pt);
                } else {
                    hi = pt.slope;
                    above = pt;
                }
                if (above.distortion - target).abs() < 1e-11 || hi - lo < 1e-12 * hi.max(1.0) {
                    break;
                }
            }
            let best = match below {
                Some(b) if b.distortion - target < target - above.distortion => b,
                _ => above,
            };
            // Move along the tangent to the exact target.
            let rate = (best.rate_bits + best.slope * (best.distortion - target) / std::f64::consts::LN_2).max(0.0);
            Ok(RdPoint { distortion: target, rate_bits: rate, slope: best.slope })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Coder configuration and typicality

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingConfig {
    pub vocab: usize,
    pub aux_size: usize,
    pub block_len: usize,
    pub window: usize,
    /// Codebook rate `R`, bits per symbol.
    pub rate: f64,
    /// Bin rate `R′`, bits per symbol.
    pub bin_rate: f64,
    pub delta: f64,
    pub seed: u64,
}

impl CodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.vocab > MAX_VOCAB {
            return Err(Error::InvalidParam(format!("vocab must be in [2, {MAX_VOCAB}], got {}", self.vocab)));
        }
        if self.aux_size < 1 || self.aux_size > self.vocab + 2 {
            return Err(Error::InvalidParam(format!("aux alphabet must be in [1, V+2], got {}", self.aux_size)));
        }
        if self.block_len < 1 || self.block_len > MAX_BLOCK {
            return Err(Error::InvalidParam(format!("block length must be in [1, {MAX_BLOCK}], got {}", self.block_len)));
        }
        if self.window < 1 {
            return Err(Error::InvalidParam("window must be at least 1".into()));
        }
        if !(self.bin_rate >= 0.0) || !(self.rate > self.bin_rate) {
            return Err(Error::InvalidParam(format!("need R > R′ ≥ 0, got R = {}, R′ = {}", self.rate, self.bin_rate)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidParam("typicality slack must be positive".into()));
        }
        Ok(())
    }

    /// `⌈2^{BR}⌉`
    pub fn n_codewords(&self) -> usize {
        ceil_tol((self.block_len as f64 * self.rate).exp2())
    }

    /// `⌈2^{BR′}⌉`, never more than the codebook size.
    pub fn n_bins(&self) -> usize {
        ceil_tol((self.block_len as f64 * self.bin_rate).exp2()).min(self.n_codewords())
    }
}

/// `[⌈B·P(1−δ)⌉, ⌊B·P(1+δ)⌋]` computed in exact rational arithmetic; `P = 0`
/// forces a zero count.
pub fn count_bounds(block_len: usize, p: f64, delta: f64) -> Result<(u32, u32)> {
    if p == 0.0 {
        return Ok((0, 0));
    }
    let exact = |x: f64| BigRational::from_float(x).ok_or_else(|| Error::InvalidParam(format!("non-finite value {x}")));
    let bp = exact(p)? * BigRational::from_integer(block_len.into());
    let d = exact(delta)?;
    let one = BigRational::one();
    let lo = (&bp * (&one - &d)).ceil();
    let hi = (&bp * (&one + &d)).floor();
    let lo = if lo < BigRational::zero() { 0 } else { lo.to_integer().to_u32().unwrap_or(u32::MAX) };
    let hi = if hi < BigRational::zero() { 0 } else { hi.to_integer().to_u32().unwrap_or(u32::MAX) };
    Ok((lo, hi))
}

/// Strong δ-typicality of a pair of sequences with respect to a joint pmf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTypicality {
    pub rows: usize,
    pub cols: usize,
    pub block_len: usize,
    lo: Vec<u32>,
    hi: Vec<u32>,
}

impl JointTypicality {
    pub fn new(joint: &[Vec<f64>], block_len: usize, delta: f64) -> Result<Self> {
        let rows = joint.len();
        let cols = joint.first().map(|r| r.len()).unwrap_or(0);
        if rows == 0 || cols == 0 || joint.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParam("joint pmf must be rectangular and non-empty".into()));
        }
        Dist::new(joint.iter().flatten().cloned().collect())?;
        let mut lo = Vec::with_capacity(rows * cols);
        let mut hi = Vec::with_capacity(rows * cols);
        for &p in joint.iter().flatten() {
            let (l, h) = count_bounds(block_len, p, delta)?;
            lo.push(l);
            hi.push(h);
        }
        Ok(Self { rows, cols, block_len, lo, hi })
    }

    pub fn typical(&self, a: &[u8], b: &[u8]) -> bool {
        debug_assert_eq!(a.len(), self.block_len);
        let mut counts = [0u32; (MAX_VOCAB + 2) * (MAX_VOCAB + 2)];
        for (&x, &y) in a.iter().zip(b) {
            counts[x as usize * self.cols + y as usize] += 1;
        }
        (0..self.rows * self.cols).all(|i| counts[i] >= self.lo[i] && counts[i] <= self.hi[i])
    }
}

/// Typicality of a symmetric-channel pair through its disagreement count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementTypicality {
    pub lo: u32,
    pub hi: u32,
}

impl AgreementTypicality {
    pub fn new(block_len: usize, crossover: f64, delta: f64) -> Result<Self> {
        let (lo, hi) = count_bounds(block_len, crossover, delta)?;
        Ok(Self { lo, hi })
    }

    pub fn disagreements(a: &[u8], b: &[u8]) -> u32 {
        a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
    }

    pub fn typical(&self, a: &[u8], b: &[u8]) -> bool {
        let d = Self::disagreements(a, b);
        d >= self.lo && d <= self.hi
    }
}

/// The typicality tests a coder can run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Typicality {
    Joint(JointTypicality),
    Agreement(AgreementTypicality),
    /// Copy auxiliary with a deterministic test channel: typical iff equal.
    Exact,
}

impl Typicality {
    pub fn typical(&self, a: &[u8], b: &[u8]) -> bool {
        match self {
            Typicality::Joint(t) => t.typical(a, b),
            Typicality::Agreement(t) => t.typical(a, b),
            Typicality::Exact => a == b,
        }
    }
}

// ---------------------------------------------------------------------------
// Codebooks, encoder, decoder

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub words: Vec<Vec<u8>>,
    pub n_bins: usize,
}

impl Codebook {
    pub fn new(words: Vec<Vec<u8>>, n_bins: usize) -> Result<Self> {
        if words.is_empty() || n_bins == 0 || n_bins > words.len() {
            return Err(Error::InvalidParam("need 1 ≤ bins ≤ codewords".into()));
        }
        Ok(Self { words, n_bins })
    }

    /// i.i.d. codewords from `p_u`.
    pub fn iid(cfg: &CodingConfig, p_u: &[f64], key: u64) -> Result<Self> {
        cfg.validate()?;
        if p_u.len() != cfg.aux_size {
            return Err(Error::DimensionMismatch { left: p_u.len(), right: cfg.aux_size });
        }
        let pu = Dist::new(p_u.to_vec())?;
        let cdf: Vec<f64> = pu.probs().iter().scan(0.0, |acc, &p| {
            *acc += p;
            Some(*acc)
        }).collect();
        let mut rng = rng_from(&[cfg.seed, key]);
        let words = (0..cfg.n_codewords())
            .map(|_| (0..cfg.block_len).map(|_| draw(&cdf, &mut rng)).collect())
            .collect();
        Self::new(words, cfg.n_bins())
    }

    pub fn bin_of(&self, index: usize) -> usize {
        index % self.n_bins
    }

    pub fn bin_members(&self, bin: usize) -> impl Iterator<Item = usize> + '_ {
        (bin..self.words.len()).step_by(self.n_bins)
    }
}

fn draw(cdf: &[f64], rng: &mut Rng) -> u8 {
    let u: f64 = rng.gen::<f64>() * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1) as u8
}

/// Bounded-table key for a window context. Distinct contexts that collide
/// share a codebook seed.
pub fn context_key(context: &[Token], table_size: u64) -> u64 {
    let mut parts = Vec::with_capacity(context.len() + 1);
    parts.push(context.len() as u64);
    parts.extend(context.iter().map(|&t| t as u64));
    mix(&parts) % table_size.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encoded {
    /// Index of the chosen codeword; 0 (the default codeword) on failure.
    pub index: usize,
    pub bin: usize,
    pub success: bool,
}

/// Smallest `k` with `(x, u_k)` typical.
pub fn encode_block(codebook: &Codebook, block: &[u8], typ: &Typicality) -> Encoded {
    match codebook.words.iter().position(|u| typ.typical(block, u)) {
        Some(k) => Encoded { index: k, bin: codebook.bin_of(k), success: true },
        None => Encoded { index: 0, bin: 0, success: false },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    /// Smallest index carrying the unique typical sequence, if there is one.
    pub index: Option<usize>,
    /// Distinct typical sequences found in the bin.
    pub n_typical: usize,
}

/// Unique typical sequence in `bin` given side information `q`. Codewords
/// that repeat the same sequence count once.
pub fn decode_block(codebook: &Codebook, bin: usize, side: &[u8], typ: &Typicality) -> Decoded {
    let mut found: Option<usize> = None;
    let mut n_typical = 0;
    for k in codebook.bin_members(bin) {
        let u = &codebook.words[k];
        if !typ.typical(u, side) {
            continue;
        }
        match found {
            Some(f) if codebook.words[f] == *u => {}
            Some(_) => n_typical += 1,
            None => {
                found = Some(k);
                n_typical += 1;
            }
        }
    }
    Decoded { index: if n_typical == 1 { found } else { None }, n_typical }
}

// ---------------------------------------------------------------------------
// Exact failure probabilities for i.i.d. codebooks

fn all_sequences(alphabet: usize, len: usize) -> Vec<Vec<u8>> {
    let total = alphabet.pow(len as u32);
    (0..total)
        .map(|mut i| {
            (0..len)
                .map(|_| {
                    let s = (i % alphabet) as u8;
                    i /= alphabet;
                    s
                })
                .collect()
        })
        .collect()
}

fn seq_prob(p: &[f64], s: &[u8]) -> f64 {
    s.iter().map(|&x| p[x as usize]).product()
}

fn marginals(joint: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<f64> = (0..joint[0].len()).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    (rows, cols)
}

fn check_enumerable(joint: &[Vec<f64>], block_len: usize) -> Result<()> {
    let states = (joint.len() * joint[0].len()).pow(block_len as u32);
    if states > 1 << 22 {
        return Err(Error::InvalidParam(format!("{states} sequence pairs is too many to enumerate")));
    }
    Ok(())
}

/// Codeword-typicality mass `π(x) = P_U^B{u : (x,u) typical}` for every `x`.
fn covering_masses(joint: &[Vec<f64>], block_len: usize, delta: f64) -> Result<Vec<(f64, f64)>> {
    check_enumerable(joint, block_len)?;
    let typ = JointTypicality::new(joint, block_len, delta)?;
    let (px, pu) = marginals(joint);
    let us: Vec<(Vec<u8>, f64)> =
        all_sequences(pu.len(), block_len).into_iter().map(|u| { let w = seq_prob(&pu, &u); (u, w) }).collect();
    Ok(all_sequences(px.len(), block_len)
        .into_iter()
        .map(|x| {
            let pi: f64 = us.iter().filter(|(u, _)| typ.typical(&x, u)).map(|(_, w)| w).sum();
            (seq_prob(&px, &x), pi)
        })
        .collect())
}

/// `P(no codeword among N is typical with X^B) = Σ_x P(x)(1 − π(x))^N`.
/// `n_codewords` may be fractional for threshold interpolation.
pub fn covering_failure_exact(joint: &[Vec<f64>], block_len: usize, delta: f64, n_codewords: f64) -> Result<f64> {
    let masses = covering_masses(joint, block_len, delta)?;
    Ok(masses.iter().map(|(px, pi)| px * (1.0 - pi).powf(n_codewords)).sum())
}

/// Failure of the unique-typical decoder when the sent codeword and side
/// information are drawn from `joint^B` and the other `K − 1` codewords in the
/// bin are i.i.d. `P_U^B`: the pair is atypical, or some other codeword
/// carries a different sequence that is typical with `q`.
pub fn packing_failure_exact(joint: &[Vec<f64>], block_len: usize, delta: f64, per_bin: f64) -> Result<f64> {
    check_enumerable(joint, block_len)?;
    let typ = JointTypicality::new(joint, block_len, delta)?;
    let (pu, pq) = marginals(joint);
    let us: Vec<(Vec<u8>, f64)> =
        all_sequences(pu.len(), block_len).into_iter().map(|u| { let w = seq_prob(&pu, &u); (u, w) }).collect();
    let mut success = 0.0;
    for q in all_sequences(pq.len(), block_len) {
        let pi: f64 = us.iter().filter(|(u, _)| typ.typical(u, &q)).map(|(_, w)| w).sum();
        for (u, pu_seq) in us.iter().filter(|(u, _)| typ.typical(u, &q)) {
            // Another codeword is harmless when atypical or equal to the sent one.
            let clear = (1.0 - pi + pu_seq).clamp(0.0, 1.0).powf((per_bin - 1.0).max(0.0));
            let pj: f64 = u.iter().zip(&q).map(|(&a, &b)| joint[a as usize][b as usize]).product();
            success += pj * clear;
        }
    }
    Ok((1.0 - success).clamp(0.0, 1.0))
}

pub fn mutual_information_bits(joint: &[Vec<f64>]) -> f64 {
    let (pa, pb) = marginals(joint);
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pa[i] * pb[j])).log2();
            }
        }
    }
    mi.max(0.0)
}

/// Rate in `[lo, hi]` where the monotone `failure(rate)` crosses ½.
pub fn half_crossing(failure: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let fa = failure(a)? - 0.5;
    let fb = failure(b)? - 0.5;
    if fa * fb > 0.0 {
        return Err(Error::Precondition(format!("failure does not cross ½ on [{lo}, {hi}]")));
    }
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if (failure(m)? - 0.5) * fa > 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Covering failure as a function of codebook rate.
pub fn covering_failure_at_rate(joint: &[Vec<f64>], block_len: usize, delta: f64, rate: f64) -> Result<f64> {
    covering_failure_exact(joint, block_len, delta, (block_len as f64 * rate).exp2())
}

/// Packing failure as a function of `R − R′`.
pub fn packing_failure_at_rate(joint: &[Vec<f64>], block_len: usize, delta: f64, rate_gap: f64) -> Result<f64> {
    packing_failure_exact(joint, block_len, delta, (block_len as f64 * rate_gap).exp2())
}

// ---------------------------------------------------------------------------
// Achievability run

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AchievabilityConfig {
    pub block_cap: usize,
    /// Codebook rate `R`, bits per token.
    pub rate: f64,
    /// Bin rate `R′`, bits per token.
    pub bin_rate: f64,
    /// Symmetric-channel crossover of the decoder's side information.
    pub side_noise: f64,
    pub delta: f64,
    /// Mix `μ = w^{-α}` of uniform into the reconstruction.
    pub smoothing: bool,
    pub table_size: u64,
    pub seed: u64,
}

impl Default for AchievabilityConfig {
    fn default() -> Self {
        Self {
            block_cap: MAX_BLOCK,
            rate: 0.375,
            bin_rate: 0.0625,
            side_noise: 0.05,
            delta: 1.0,
            smoothing: true,
            table_size: 1 << 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingOutcome {
    pub n: usize,
    pub window: usize,
    pub block_len: usize,
    /// Bin indices plus escaped blocks, per token.
    pub rate_bits: f64,
    /// Mean `KL(p_t ‖ p̂_t)` over `t ≥ 1`, nats per token.
    pub kl_nats: f64,
    /// Mean entropy of the true conditionals, bits per token; the `R(0)`
    /// reference for the copy auxiliary.
    pub reference_bits: f64,
    pub encode_failures: usize,
    /// Blocks whose decoded codeword differs from the one sent.
    pub decode_failures: usize,
    pub blocks: usize,
}

/// Conditional from the last `w` tokens of `history` only.
fn window_conditional(src: &SyntheticSource, history: &[Token], w: usize) -> Dist {
    let v = src.vocab();
    let eta = src.eta();
    let t = history.len();
    let reach = t.min(w).min(src.l_max());
    let pmf = src.lag_pmf();
    let mut probs = vec![0.0; v];
    for lag in 1..=reach {
        probs[history[t - lag] as usize] += (1.0 - eta) * pmf[lag - 1];
    }
    let unknown = src.tail(reach);
    let u = eta / v as f64 + (1.0 - eta) * unknown / v as f64;
    probs.iter_mut().for_each(|x| *x += u);
    Dist::from_raw(probs)
}

/// Continuation of `context` drawn from the law that sees only `context`.
fn sample_continuation(src: &SyntheticSource, context: &[Token], len: usize, rng: &mut Rng) -> Vec<u8> {
    let v = src.vocab() as u32;
    let mut out: Vec<u8> = Vec::with_capacity(len);
    for i in 0..len {
        let tok = if rng.gen::<f64>() < src.eta() {
            rng.gen_range(0..v)
        } else {
            let lag = src.sample_lag(rng);
            if lag <= i {
                out[i - lag] as u32
            } else if lag - i <= context.len() {
                context[context.len() - (lag - i)]
            } else {
                rng.gen_range(0..v)
            }
        };
        out.push(tok as u8);
    }
    out
}

/// Block-Markov coding of `n` source tokens with window `w_n` and block
/// length `min(w_n, block_cap)`.
///
/// Codewords for a block are continuations of the decoder's window context,
/// so the copy auxiliary's typicality test is exact equality. When no
/// codeword matches, the block is sent uncoded and counted as an encoder
/// failure. The decoder sees the block through a symmetric channel and keeps
/// the unique agreement-typical sequence in the bin; on failure it falls back
/// to the closest codeword in the bin.
pub fn run_achievability(
    src: &SyntheticSource,
    n: usize,
    alpha: f64,
    cfg: &AchievabilityConfig,
) -> Result<CodingOutcome> {
    let v = src.vocab();
    if v > 4 {
        return Err(Error::InvalidParam(format!("achievability runs need V ≤ 4, got {v}")));
    }
    if n > MAX_N {
        return Err(Error::InvalidParam(format!("n capped at {MAX_N}, got {n}")));
    }
    let w = achievability_window(n as u64, alpha)?;
    let block_len = w.min(cfg.block_cap).min(MAX_BLOCK);
    if n < 4 * block_len {
        return Err(Error::Precondition(format!("n = {n} too short for four blocks of length {block_len}")));
    }
    let coding = CodingConfig {
        vocab: v,
        aux_size: v,
        block_len,
        window: w,
        rate: cfg.rate,
        bin_rate: cfg.bin_rate,
        delta: cfg.delta,
        seed: cfg.seed,
    };
    coding.validate()?;
    if !(0.0..1.0).contains(&cfg.side_noise) {
        return Err(Error::InvalidParam("side-information noise must be in [0, 1)".into()));
    }
    let side_typ = Typicality::Agreement(AgreementTypicality::new(block_len, cfg.side_noise, cfg.delta)?);
    let n_words = coding.n_codewords();
    let n_bins = coding.n_bins();
    let bin_bits = (n_bins as f64).log2();
    let escape_bits = block_len as f64 * (v as f64).log2();
    let mu = if cfg.smoothing { (w as f64).powf(-alpha).min(1.0) } else { 0.0 };

    let x = src.sample_prefix(n, mix(&[cfg.seed, 0xA11CE]));
    let mut decoded: Vec<Token> = Vec::with_capacity(n);
    let (mut bits, mut enc_fail, mut dec_fail, mut blocks) = (0.0, 0, 0, 0);
    let mut start = 0;
    while start < n {
        let len = block_len.min(n - start);
        let block: Vec<u8> = x[start..start + len].iter().map(|&t| t as u8).collect();
        let ctx = &decoded[start.saturating_sub(w)..start];
        let key = context_key(ctx, cfg.table_size);
        let mut rng = rng_from(&[cfg.seed, key, len as u64]);
        let words: Vec<Vec<u8>> = (0..n_words).map(|_| sample_continuation(src, ctx, len, &mut rng)).collect();
        let book = Codebook::new(words, n_bins)?;
        let enc = encode_block(&book, &block, &Typicality::Exact);
        blocks += 1;
        if !enc.success {
            enc_fail += 1;
            bits += escape_bits * len as f64 / block_len as f64 + bin_bits;
            decoded.extend(x[start..start + len].iter());
        } else {
            bits += bin_bits;
            let mut side_rng = rng_from(&[cfg.seed, 0x51DE, start as u64]);
            let side: Vec<u8> = block
                .iter()
                .map(|&s| {
                    if side_rng.gen::<f64>() < cfg.side_noise {
                        let o = side_rng.gen_range(0..v as u8 - 1);
                        if o >= s { o + 1 } else { o }
                    } else {
                        s
                    }
                })
                .collect();
            let choice = match decode_block(&book, enc.bin, &side, &side_typ).index {
                Some(k) => k,
                None => book
                    .bin_members(enc.bin)
                    .min_by_key(|&k| AgreementTypicality::disagreements(&book.words[k], &side))
                    .unwrap_or(enc.index),
            };
            if book.words[choice] != book.words[enc.index] {
                dec_fail += 1;
            }
            decoded.extend(book.words[choice].iter().map(|&s| s as Token));
        }
        start += len;
    }

    let (mut kl_sum, mut h_sum) = (0.0, 0.0);
    for t in 1..n {
        let p = src.full_conditional(&x[..t])?;
        let q = window_conditional(src, &decoded[..t], w);
        let q = if mu > 0.0 { smooth(&q, mu)? } else { q };
        kl_sum += kl(&p, &q)?;
        h_sum += crate::dist::entropy_bits(p.probs());
    }
    Ok(CodingOutcome {
        n,
        window: w,
        block_len,
        rate_bits: bits / n as f64,
        kl_nats: kl_sum / (n - 1) as f64,
        reference_bits: h_sum / (n - 1) as f64,
        encode_failures: enc_fail,
        decode_failures: dec_fail,
        blocks,
    })
}

/// Seed-averaged outcomes over an `n` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AchievabilityRow {
    pub n: usize,
    pub window: usize,
    pub block_len: usize,
    pub mean_rate_bits: f64,
    pub mean_kl_nats: f64,
    pub mean_reference_bits: f64,
    pub encode_failures: usize,
    pub decode_failures: usize,
    pub blocks: usize,
}

pub fn achievability_sweep(
    src: &SyntheticSource,
    ns: &[usize],
    alpha: f64,
    cfg: &AchievabilityConfig,
    n_seeds: usize,
) -> Result<Vec<AchievabilityRow>> {
    if n_seeds == 0 {
        return Err(Error::InvalidParam("need at least one seed".into()));
    }
    ns.iter()
        .map(|&n| {
            let runs: Vec<CodingOutcome> = (0..n_seeds as u64)
                .into_par_iter()
                .map(|s| run_achievability(src, n, alpha, &AchievabilityConfig { seed: mix(&[cfg.seed, s]), ..*cfg }))
                .collect::<Result<_>>()?;
            let k = runs.len() as f64;
            Ok(AchievabilityRow {
                n,
                window: runs[0].window,
                block_len: runs[0].block_len,
                mean_rate_bits: runs.iter().map(|r| r.rate_bits).sum::<f64>() / k,
                mean_kl_nats: runs.iter().map(|r| r.kl_nats).sum::<f64>() / k,
                mean_reference_bits: runs.iter().map(|r| r.reference_bits).sum::<f64>() / k,
                encode_failures: runs.iter().map(|r| r.encode_failures).sum(),
                decode_failures: runs.iter().map(|r| r.decode_failures).sum(),
                blocks: runs.iter().map(|r| r.blocks).sum(),
            })
        })
        .collect()
}

/// Least-squares slope of `ln kl` against `ln n`.
pub fn loglog_slope(rows: &[AchievabilityRow]) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.mean_kl_nats > 0.0)
        .map(|r| ((r.n as f64).ln(), r.mean_kl_nats.ln()))
        .unzip();
    if x.len() < 2 {
        return Err(Error::Fit("need two positive points for a slope".into()));
    }
    Ok(crate::fit::ols(&x, &y)?.1)
}
