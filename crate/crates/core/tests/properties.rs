use proptest::prelude::*;
use rand::Rng;

use trunclab::alloc::{self, LayerStack, RdFamily};
use trunclab::dist::*;
use trunclab::fit::{fit_points, Family};
use trunclab::hedge::{build_grid, run_hedge};
use trunclab::rng::rng_from;
use trunclab::source::{Scratch, SourceSpec, SyntheticSource};
use trunclab::window::{exponents, window_tv, SensitivityParams};
use trunclab::wz::{self, hamming, rd_reference, AchievabilityConfig};

fn dist_strategy(v: usize) -> impl Strategy<Value = Dist> {
    proptest::collection::vec(1e-6f64..1.0, v).prop_map(|w| Dist::from_weights(&w).unwrap())
}

fn pair() -> impl Strategy<Value = (Dist, Dist)> {
    (2usize..64).prop_flat_map(|v| (dist_strategy(v), dist_strategy(v)))
}

/// `q` with every entry at least `floor`, and `p` within TV `floor/2` of `q`.
fn floored_pair(rng: &mut impl Rng) -> (Dist, Dist, f64) {
    let v = rng.gen_range(2..=64);
    let floor = rng.gen_range(0.05..1.0) / v as f64;
    let raw: Vec<f64> = (0..v).map(|_| rng.gen::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    let q: Vec<f64> = raw.iter().map(|x| floor + (1.0 - v as f64 * floor) * x / s).collect();
    // Move mass `t` from donors to receivers without pushing below zero.
    let t = rng.gen_range(0.0..floor / 2.0);
    let signs: Vec<f64> = (0..v).map(|_| rng.gen::<f64>() - 0.5).collect();
    let pos: f64 = signs.iter().filter(|&&x| x > 0.0).sum();
    let neg: f64 = -signs.iter().filter(|&&x| x < 0.0).sum::<f64>();
    let p: Vec<f64> = if pos == 0.0 || neg == 0.0 {
        q.clone()
    } else {
        q.iter()
            .zip(&signs)
            .map(|(&qi, &s)| if s > 0.0 { qi + t * s / pos } else { (qi + t * s / neg).max(0.0) })
            .collect()
    };
    let p = Dist::from_weights(&p).unwrap();
    (p, Dist::new(q).unwrap(), floor)
}

#[test]
fn quadratic_bound_holds_on_ten_thousand_floored_pairs() {
    let mut rng = rng_from(&[41]);
    let mut checked = 0;
    for _ in 0..10_000 {
        let (p, q, floor) = floored_pair(&mut rng);
        let t = tv(&p, &q).unwrap();
        let b = kl_tv_quadratic_bound(t, floor);
        assert!(b.applicable);
        let k = kl(&p, &q).unwrap();
        assert!(k <= b.value * (1.0 + 1e-12) + 1e-15, "kl {k} > {}", b.value);
        assert!(t <= pinsker_tv_bound(k) + 1e-12);
        checked += 1;
    }
    assert_eq!(checked, 10_000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn pinsker((p, q) in pair()) {
        let t = tv(&p, &q).unwrap();
        let k = kl(&p, &q).unwrap();
        prop_assert!(t <= pinsker_tv_bound(k) + 1e-12);
    }

    #[test]
    fn tv_triangle(v in 2usize..32, seed in any::<u64>()) {
        let mut rng = rng_from(&[seed]);
        let mut d = || Dist::from_weights(&(0..v).map(|_| rng.gen::<f64>() + 1e-9).collect::<Vec<_>>()).unwrap();
        let (a, b, c) = (d(), d(), d());
        prop_assert!(tv(&a, &c).unwrap() <= tv(&a, &b).unwrap() + tv(&b, &c).unwrap() + 1e-12);
    }

    #[test]
    fn smoothed_decoder_bound((p, q) in pair(), mu in 0.001f64..0.9) {
        let d = tv(&p, &q).unwrap();
        let k = kl(&p, &smooth(&q, mu).unwrap()).unwrap();
        prop_assert!(k <= kl_tv_smoothed_bound(p.len(), d, mu));
    }

    #[test]
    fn truncated_conditional_within_the_tail(alpha in 0.2f64..1.5, seed in 0u64..1000, w in 1usize..64) {
        let src = SyntheticSource::new(SourceSpec::power_lag(alpha, 8, 128, 0.3, seed)).unwrap();
        let h = src.sample_prefix(200, seed);
        let full = src.full_conditional(&h).unwrap();
        let trunc = src.truncated_conditional(&h, w).unwrap();
        prop_assert!(tv(&full, &trunc).unwrap() <= src.analytic_tv_tail(w) + 1e-12);
    }

    #[test]
    fn power_fit_recovers_noiseless_samples(c in 0.01f64..100.0, alpha in 0.05f64..3.0, scale in 0.001f64..1000.0) {
        let w: Vec<f64> = (1..=9).map(|i| (1u64 << i) as f64).collect();
        let y: Vec<f64> = w.iter().map(|x| c * x.powf(-alpha)).collect();
        let f = fit_points(&w, &y, Family::Power).unwrap();
        prop_assert!((f.params[1] - alpha).abs() < 1e-6);
        prop_assert!((f.params[0].ln() - c.ln()).abs() < 1e-6);
        let scaled: Vec<f64> = y.iter().map(|v| v * scale).collect();
        let g = fit_points(&w, &scaled, Family::Power).unwrap();
        prop_assert!((g.params[1] - f.params[1]).abs() < 1e-9);
    }

    #[test]
    fn exponential_fit_recovers_noiseless_samples(c in 0.01f64..100.0, rho in 0.5f64..0.999) {
        let w: Vec<f64> = (1..=12).map(|i| (4 * i) as f64).collect();
        let y: Vec<f64> = w.iter().map(|x| c * rho.powf(*x)).collect();
        let f = fit_points(&w, &y, Family::Exponential).unwrap();
        prop_assert!((f.params[1].ln() - rho.ln()).abs() < 1e-6);
    }

    #[test]
    fn window_tv_inverts_the_tail(alpha in 0.2f64..1.5, eta in 0.0f64..0.9, e in -4.0f64..-0.3) {
        let src = SyntheticSource::new(SourceSpec::power_lag(alpha, 16, 4096, eta, 0)).unwrap();
        let p = SensitivityParams::of_source(&src).unwrap();
        let eps = 10f64.powf(e);
        let w = window_tv(&p, eps).unwrap().value;
        prop_assert!(src.analytic_tv_tail(w) <= eps);
    }

    #[test]
    fn high_probability_rate_exponent_is_half(alpha in 0.01f64..10.0) {
        let e = exponents(alpha).unwrap();
        prop_assert_eq!(e.rate_exp_hp * 2.0, e.rate_exp_expectation);
    }

    #[test]
    fn hedge_mixture_regret_within_bound(t in 1usize..200, k in 1usize..8, seed in any::<u64>(), l_max in 0.1f64..10.0, adversarial in any::<bool>()) {
        let mut rng = rng_from(&[seed]);
        let losses: Vec<Vec<f64>> = (0..t)
            .map(|b| {
                (0..k)
                    .map(|j| if adversarial { if (b + j) % 2 == 0 { l_max } else { 0.0 } } else { rng.gen::<f64>() * l_max })
                    .collect()
            })
            .collect();
        let out = run_hedge(&losses, 1.0, l_max).unwrap();
        prop_assert!(out.mixture_regret <= out.bound + 1e-9, "{} > {}", out.mixture_regret, out.bound);
    }

    #[test]
    fn universal_grid_windows_nest(alpha_min in 0.1f64..0.8, span in 0.0f64..0.8, logn in 6u32..22) {
        let n = 1u64 << logn;
        if let Ok(g) = build_grid(alpha_min, alpha_min + span, n) {
            // Strictly decreasing: every smaller window is a suffix of the largest.
            prop_assert!(g.windows.windows(2).all(|p| p[0] > p[1]));
            let w0 = trunclab::window::ceil_tol((n as f64).powf(1.0 / (alpha_min + 1.0)));
            prop_assert_eq!(g.windows[0], w0);
        }
    }

    #[test]
    fn rd_rate_nonincreasing(w in proptest::collection::vec(0.01f64..1.0, 2..5)) {
        let s: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / s).collect();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let pts = rd_reference(&p, &hamming(p.len()), &grid).unwrap();
        for pair in pts.windows(2) {
            prop_assert!(pair[1].rate_bits <= pair[0].rate_bits + 1e-9);
        }
    }

    #[test]
    fn allocation_beats_uniform(layers in 2usize..12, l_g in 1.0f64..1.2, skip in any::<bool>(), budget in 0.05f64..2.0, var in 0.5f64..4.0) {
        let stack = LayerStack::uniform(layers, l_g, 0.1, 1.0, skip).unwrap();
        let fams = vec![RdFamily::Gaussian { variance: var }; layers];
        let l2 = l_g * l_g;
        let Ok(a) = alloc::water_fill(&stack, &fams, budget, l2) else { return Ok(()) };
        prop_assert!(a.kkt_residual(&fams) < 1e-6);
        prop_assert!((a.constraint_value(l2) - budget).abs() <= 1e-8 * budget.max(1.0) || a.active.iter().all(|x| !x));
        let uniform = alloc::uniform_allocation_rate(&stack, &fams, budget, l2).unwrap();
        prop_assert!(a.total_rate <= uniform + 1e-9);
        let varies = a.sensitivities.windows(2).any(|p| (p[0] - p[1]).abs() > 1e-6 * p[0]);
        if varies && a.active.iter().all(|x| *x) {
            prop_assert!(a.total_rate < uniform);
        }
    }
}

#[test]
fn propagation_recursion_bounds_direct_composition() {
    let mut rng = rng_from(&[0x9209]);
    for trial in 0..1000u64 {
        let layers = rng.gen_range(1..8);
        let l_g: Vec<f64> = (0..layers).map(|_| rng.gen_range(0.5..1.5)).collect();
        let dim = rng.gen_range(1..12);
        let scale = 10f64.powf(rng.gen_range(-3.0..0.0));
        let (actual, bound) = alloc::propagation_trial(&l_g, dim, scale, trial).unwrap();
        assert!(actual <= bound * (1.0 + 1e-12), "trial {trial}: {actual} > {bound}");
    }
}

#[test]
fn achievability_is_deterministic_under_fixed_seeds() {
    let src = SyntheticSource::new(SourceSpec::power_lag(1.0, 4, 256, 1e-3, 2)).unwrap();
    let cfg = AchievabilityConfig { seed: 9, ..Default::default() };
    let a = wz::run_achievability(&src, 512, 1.0, &cfg).unwrap();
    let b = wz::run_achievability(&src, 512, 1.0, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn sparse_window_divergences_stay_within_tail() {
    let src = SyntheticSource::new(SourceSpec::power_lag(0.5, 64, 1024, 0.3, 5)).unwrap();
    let grid = [1, 2, 4, 16, 64, 256, 1000];
    let mut scratch = Scratch::new();
    for seed in 0..50 {
        let h = src.sample_prefix(1025, seed);
        let d = src.window_divergences(&h, &grid, None, &mut scratch).unwrap();
        for (x, &w) in d.iter().zip(&grid) {
            assert!(x.tv <= src.analytic_tv_tail(w) + 1e-12);
            assert!(x.kl >= 0.0);
        }
    }
}
