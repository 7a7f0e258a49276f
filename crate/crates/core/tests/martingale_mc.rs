use trunclab::martingale::*;

fn pow2(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

fn check_profile(alpha: f64, n: usize, seeds: usize, max_lag: usize) {
    let seqs = generate_many(MemoryKind::LongMemory { alpha }, n, 5.0, 100, seeds).unwrap();
    let mut lags: Vec<usize> = (0..).map(|i| 1usize << i).take_while(|&k| k <= max_lag).collect();
    lags.push(max_lag);
    let emp = empirical_autocov(&seqs, &lags).unwrap();
    let c = longmem_constant(alpha);
    for (k, e) in lags.iter().zip(&emp) {
        let target = c * (*k as f64).powf(-alpha);
        assert!((e / target - 1.0).abs() <= 0.2, "alpha {alpha}, lag {k}: {e} vs {target}");
    }
}

#[test]
fn autocovariance_follows_the_power_profile() {
    for alpha in [0.3, 0.5] {
        check_profile(alpha, 4096, 100, 409);
    }
}

#[test]
fn autocovariance_profile_for_faster_decay() {
    // Above α = ½ the estimator's relative noise at lag k grows like k^α/√n,
    // so the far lags need more seeds than the profile tolerance allows.
    check_profile(0.7, 4096, 1000, 128);
}

#[test]
fn block_variance_exponents() {
    let n = 1 << 14;
    let grid = pow2(1, 10);
    let lm = generate_many(MemoryKind::LongMemory { alpha: 0.5 }, n, 5.0, 0, 100).unwrap();
    let s = block_variance_slope(&lm, &grid).unwrap();
    println!("alpha 0.5 slope {s}");
    assert!((s - 1.5).abs() <= 0.1);
    let iid = generate_many(MemoryKind::Iid, n, 5.0, 0, 100).unwrap();
    let s = block_variance_slope(&iid, &grid).unwrap();
    println!("iid slope {s}");
    assert!((s - 1.0).abs() <= 0.05);
    let near = generate_many(MemoryKind::LongMemory { alpha: 0.95 }, n, 5.0, 0, 100).unwrap();
    let s = block_variance_slope(&near, &grid).unwrap();
    println!("alpha 0.95 slope {s}");
    assert!(s > 1.0 && s < 1.12);
    let par = generate_many(MemoryKind::Parity, n, 1.0, 0, 100).unwrap();
    let s = block_variance_slope(&par, &grid).unwrap();
    println!("parity slope {s}");
    assert!((s - 2.0).abs() <= 0.05);
}

#[test]
fn envelope_ordering() {
    let alpha = 0.5;
    let n = 4096;
    let b = trunclab::window::ceil_tol((n as f64).powf(1.0 / (alpha + 1.0)));
    let seqs = generate_many(MemoryKind::LongMemory { alpha }, n, 4.0, 7, 400).unwrap();
    let p = EnvelopeParams::longmem(alpha, 4.0, n);
    for delta in [0.05, 0.1, 0.2] {
        let e = deviation_envelopes(&seqs, b, delta, &p).unwrap();
        println!("{delta} {e:?}");
        assert!(e.empirical <= e.freedman && e.freedman <= e.azuma);
    }
}

#[test]
fn envelope_exponents() {
    let alpha = 0.5;
    let ns = pow2(10, 24);
    let p = EnvelopeParams::longmem(alpha, 4.0, 1 << 20);
    let f = envelope_scaling(&ns, alpha, |n, b| freedman_envelope(n, b, &p, 0.05)).unwrap();
    let a = envelope_scaling(&ns, alpha, |n, b| azuma_envelope(n, b, 4.0, 0.05)).unwrap();
    println!("freedman {f} azuma {a}");
    assert!((f + alpha / (alpha + 1.0)).abs() <= 0.1);
    assert!((a + alpha / (2.0 * (alpha + 1.0))).abs() <= 0.1);
}

#[test]
fn iid_envelopes_share_the_square_root_rate() {
    let p = EnvelopeParams::iid(4.0);
    let ns = pow2(16, 30);
    let slope = |f: &dyn Fn(usize) -> f64| {
        let (x, y): (Vec<f64>, Vec<f64>) = ns.iter().map(|&n| ((n as f64).ln(), f(n).ln())).unzip();
        trunclab::fit::ols(&x, &y).unwrap().1
    };
    let f = slope(&|n| freedman_envelope(n, 16, &p, 0.05));
    let a = slope(&|n| azuma_envelope(n, 16, 4.0, 0.05));
    assert!((f + 0.5).abs() < 0.05 && (a + 0.5).abs() < 1e-9, "{f} {a}");
    let seqs = generate_many(MemoryKind::Iid, 4096, 4.0, 3, 200).unwrap();
    let e = deviation_envelopes(&seqs, 16, 0.05, &p).unwrap();
    assert!(e.empirical <= e.freedman && e.freedman <= e.azuma);
    assert!(e.azuma / e.freedman < 20.0);
}

#[test]
fn vacuous_confidence_level() {
    let seqs = generate_many(MemoryKind::LongMemory { alpha: 0.5 }, 1024, 4.0, 0, 50).unwrap();
    let e = deviation_envelopes(&seqs, 32, 1.0, &EnvelopeParams::longmem(0.5, 4.0, 1024)).unwrap();
    assert_eq!(e.freedman, 0.0);
    // P(deviation ≤ bound) ≥ 1 − δ = 0 holds for any bound.
    assert!(e.coverage_freedman >= 0.0 && e.coverage_azuma >= 0.0);
    assert!(e.empirical >= 0.0);
}

#[test]
fn block_variance_stays_under_the_lemma_bound() {
    let (alpha, j) = (0.5, 5.0);
    let n = 1 << 14;
    let seqs = generate_many(MemoryKind::LongMemory { alpha }, n, j, 50, 100).unwrap();
    let p = EnvelopeParams::longmem(alpha, j, n);
    for b in pow2(1, 10) {
        let emp = block_variance(&seqs, b).unwrap();
        let bound = lemma_block_variance_bound(b, p.variance, p.j_max, p.c_ts, alpha);
        assert!(emp <= bound, "B={b}: {emp} > {bound}");
        // the lemma constant is not sharp, but it is within a factor of 4
        assert!(bound <= 4.0 * emp, "B={b}: {emp} vs {bound}");
    }
}

#[test]
fn fixed_seed_reproduces() {
    let a = generate_many(MemoryKind::LongMemory { alpha: 0.4 }, 512, 3.0, 9, 4).unwrap();
    let b = generate_many(MemoryKind::LongMemory { alpha: 0.4 }, 512, 3.0, 9, 4).unwrap();
    assert_eq!(a, b);
}
