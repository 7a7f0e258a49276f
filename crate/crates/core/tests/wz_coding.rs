use rand::Rng;
use trunclab::rng::rng_from;
use trunclab::source::{SourceSpec, SyntheticSource};
use trunclab::wz::*;

fn words(b: usize) -> Vec<Vec<u8>> {
    (0..1usize << b).map(|i| (0..b).map(|k| ((i >> k) & 1) as u8).collect()).collect()
}

fn seq_p(p: &[f64], s: &[u8]) -> f64 {
    s.iter().map(|&x| p[x as usize]).product()
}

fn marg(j: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    (vec![j[0][0] + j[0][1], j[1][0] + j[1][1]], vec![j[0][0] + j[1][0], j[0][1] + j[1][1]])
}

fn copy() -> Vec<Vec<f64>> {
    vec![vec![0.5, 0.0], vec![0.0, 0.5]]
}
fn bsc() -> Vec<Vec<f64>> {
    vec![vec![0.375, 0.125], vec![0.125, 0.375]]
}
fn zch() -> Vec<Vec<f64>> {
    vec![vec![0.5, 0.0], vec![0.25, 0.25]]
}
fn z3() -> Vec<Vec<f64>> {
    vec![vec![0.375, 0.0], vec![0.25, 0.375]]
}

/// Covering failure by enumerating every ordered codebook of size `n` and
/// running the encoder on every source block.
fn covering_by_enumeration(joint: &[Vec<f64>], b: usize, delta: f64, n: usize) -> f64 {
    let typ = Typicality::Joint(JointTypicality::new(joint, b, delta).unwrap());
    let (px, pu) = marg(joint);
    let all = words(b);
    let m = all.len();
    let mut fail = 0.0;
    for code in 0..m.pow(n as u32) {
        let mut c = code;
        let book: Vec<Vec<u8>> = (0..n)
            .map(|_| {
                let w = all[c % m].clone();
                c /= m;
                w
            })
            .collect();
        let w_book: f64 = book.iter().map(|u| seq_p(&pu, u)).product();
        let cb = Codebook::new(book, 1).unwrap();
        for x in &all {
            if !encode_block(&cb, x, &typ).success {
                fail += w_book * seq_p(&px, x);
            }
        }
    }
    fail
}

/// Packing failure by enumerating the sent pair and every set of `k − 1`
/// competing codewords, running the decoder on each.
fn packing_by_enumeration(joint: &[Vec<f64>], b: usize, delta: f64, k: usize) -> f64 {
    let typ = Typicality::Joint(JointTypicality::new(joint, b, delta).unwrap());
    let (pu, _) = marg(joint);
    let all = words(b);
    let m = all.len();
    let mut fail = 0.0;
    for u in &all {
        for q in &all {
            let pj: f64 = u.iter().zip(q).map(|(&a, &c)| joint[a as usize][c as usize]).product();
            if pj == 0.0 {
                continue;
            }
            for code in 0..m.pow(k as u32 - 1) {
                let mut c = code;
                let mut book = vec![u.clone()];
                let mut w = 1.0;
                for _ in 1..k {
                    let o = all[c % m].clone();
                    c /= m;
                    w *= seq_p(&pu, &o);
                    book.push(o);
                }
                let cb = Codebook::new(book, 1).unwrap();
                let d = decode_block(&cb, 0, q, &typ);
                if d.index.map(|i| cb.words[i] != *u).unwrap_or(true) {
                    fail += pj * w;
                }
            }
        }
    }
    fail
}

#[test]
fn covering_formula_matches_exhaustive_codebooks() {
    for (joint, delta) in [(copy(), 0.5), (z3(), 0.5), (bsc(), 1.0)] {
        for n in 1..=3 {
            let brute = covering_by_enumeration(&joint, 4, delta, n);
            let exact = covering_failure_exact(&joint, 4, delta, n as f64).unwrap();
            assert!((brute - exact).abs() < 1e-12, "n={n}: {brute} vs {exact}");
        }
    }
}

#[test]
fn packing_formula_matches_exhaustive_codebooks() {
    for (joint, delta) in [(bsc(), 1.0), (zch(), 1.0), (copy(), 0.5)] {
        for k in 1..=3 {
            let brute = packing_by_enumeration(&joint, 4, delta, k);
            let exact = packing_failure_exact(&joint, 4, delta, k as f64).unwrap();
            assert!((brute - exact).abs() < 1e-12, "k={k}: {brute} vs {exact}");
        }
    }
}

fn covering_gap(joint: &[Vec<f64>], b: usize, delta: f64) -> f64 {
    let r = half_crossing(|r| covering_failure_at_rate(joint, b, delta, r), 0.0, 3.0).unwrap();
    r - mutual_information_bits(joint)
}

fn packing_gap(joint: &[Vec<f64>], b: usize, delta: f64) -> f64 {
    let r = half_crossing(|r| packing_failure_at_rate(joint, b, delta, r), 0.0, 3.0).unwrap();
    r - mutual_information_bits(joint)
}

#[test]
fn covering_crosses_half_near_mutual_information() {
    for (joint, b, delta) in [(copy(), 4, 0.5), (z3(), 4, 0.5), (bsc(), 4, 1.0), (zch(), 8, 0.5), (bsc(), 8, 1.0)] {
        let g = covering_gap(&joint, b, delta);
        assert!(g.abs() <= 2.0 * delta, "B={b} δ={delta}: gap {g}");
    }
}

#[test]
fn packing_crosses_half_near_mutual_information() {
    for (joint, b, delta) in [(bsc(), 4, 1.0), (zch(), 8, 0.5), (bsc(), 8, 1.0)] {
        let g = packing_gap(&joint, b, delta);
        assert!(g.abs() <= 2.0 * delta, "B={b} δ={delta}: gap {g}");
    }
}

#[test]
fn copy_side_information_never_confuses_the_decoder() {
    // Only u = q is typical with q, so extra codewords cannot collide.
    for k in [1.0, 4.0, 64.0] {
        let f = packing_failure_exact(&copy(), 4, 0.5, k).unwrap();
        assert!((f - 0.125).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_encoder_tracks_the_covering_formula() {
    let joint = zch();
    let (b, delta) = (8, 0.5);
    let typ = Typicality::Joint(JointTypicality::new(&joint, b, delta).unwrap());
    let (px, pu) = marg(&joint);
    for rate in [0.1, 0.3, 0.5] {
        let cfg = CodingConfig { vocab: 2, aux_size: 2, block_len: b, window: 8, rate, bin_rate: 0.0, delta, seed: 17 };
        let n = cfg.n_codewords();
        let exact = covering_failure_exact(&joint, b, delta, n as f64).unwrap();
        let trials = 4000;
        let mut fails = 0;
        for t in 0..trials {
            let book = Codebook::iid(&cfg, &pu, t).unwrap();
            let mut rng = rng_from(&[t, 99]);
            let x: Vec<u8> = (0..b).map(|_| (rng.gen::<f64>() >= px[0]) as u8).collect();
            fails += !encode_block(&book, &x, &typ).success as usize;
        }
        let est = fails as f64 / trials as f64;
        let sd = (exact * (1.0 - exact) / trials as f64).sqrt().max(1e-3);
        assert!((est - exact).abs() < 4.0 * sd, "rate {rate}: {est} vs {exact}");
    }
}

#[test]
fn rate_falls_along_the_reference_curve() {
    let p = [0.6, 0.4];
    let grid: Vec<f64> = (0..=40).map(|i| i as f64 * 0.01).collect();
    let pts = rd_reference(&p, &hamming(2), &grid).unwrap();
    for w in pts.windows(2) {
        assert!(w[1].rate_bits <= w[0].rate_bits + 1e-9);
    }
    assert_eq!(pts.last().unwrap().rate_bits, 0.0);
}

#[test]
fn full_window_leaves_only_coding_loss() {
    // L_max ≤ w_n for every n below: the window never truncates.
    let src = SyntheticSource::new(SourceSpec::power_lag(1.0, 4, 16, 1e-3, 3)).unwrap();
    let exact_side = AchievabilityConfig { side_noise: 0.0, smoothing: false, ..Default::default() };
    let ns = [256, 1024, 4096];
    let rows = achievability_sweep(&src, &ns, 1.0, &exact_side, 5).unwrap();
    let gaps: Vec<f64> = rows.iter().map(|r| r.mean_rate_bits - r.mean_reference_bits).collect();
    for (row, &gap) in rows.iter().zip(&gaps) {
        assert!(row.window >= 16);
        assert_eq!(row.decode_failures, 0);
        assert_eq!(row.mean_kl_nats, 0.0);
        assert!(gap >= 0.0, "n={}: gap {gap}", row.n);
        // 256 symbols is only 16 coded blocks; the overhead there sits near 0.12 bits.
        if row.n >= 1024 {
            assert!(gap <= 0.1, "n={}: gap {gap}", row.n);
        }
    }
    assert!(gaps[2] < gaps[0], "{gaps:?}");
    let noisy = AchievabilityConfig { smoothing: false, ..Default::default() };
    for s in 0..5 {
        let out = run_achievability(&src, 2048, 1.0, &AchievabilityConfig { seed: s, ..noisy }).unwrap();
        if out.decode_failures == 0 {
            assert_eq!(out.kl_nats, 0.0);
        }
    }
}

#[test]
fn distortion_excess_shrinks_with_n() {
    let src = SyntheticSource::new(SourceSpec::power_lag(1.0, 4, 1024, 1e-3, 3)).unwrap();
    let rows = achievability_sweep(&src, &[256, 1024, 4096], 1.0, &AchievabilityConfig::default(), 10).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].mean_kl_nats < w[0].mean_kl_nats);
    }
    assert!(rows.iter().all(|r| r.mean_rate_bits >= 0.0));
}
