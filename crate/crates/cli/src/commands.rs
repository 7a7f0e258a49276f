//! Subcommand parameters and their runs.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use trunclab::alloc::{self, LayerStack, RdFamily};
use trunclab::fit::{self, Family, FitResult};
use trunclab::fixtures;
use trunclab::hedge::{run_universal, UniversalConfig};
use trunclab::io::{self, MeasurementRecord, Selection};
use trunclab::martingale::{self, EnvelopeParams, MemoryKind};
use trunclab::policy::{degrade_sweep, DegradeConfig, PolicyKind};
use trunclab::source::{SourceSpec, SyntheticSource};
use trunclab::sweep::{pow2_grid, sweep, Protocol, Statistic, SweepConfig, TruncationCurve};
use trunclab::window::{self, SensitivityParams};
use trunclab::wz::{self, AchievabilityConfig};

use crate::Failure;

/// Output sink: tables go to stdout, and to `<out>/<name>` when an output
/// directory is set.
pub struct Out {
    pub dir: Option<PathBuf>,
}

impl Out {
    fn file(&self, name: &str) -> Result<Option<std::fs::File>, Failure> {
        let Some(dir) = &self.dir else { return Ok(None) };
        std::fs::create_dir_all(dir).map_err(|e| Failure::Compute(format!("{}: {e}", dir.display())))?;
        let path = dir.join(name);
        let f = std::fs::File::create(&path).map_err(|e| Failure::Compute(format!("{}: {e}", path.display())))?;
        Ok(Some(f))
    }

    /// Writes a CSV table to stdout and to `<out>/<name>.csv`.
    pub fn table(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
        let write = |w: &mut dyn Write| -> Result<(), Failure> {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(header).map_err(compute)?;
            for r in rows {
                c.write_record(r).map_err(compute)?;
            }
            c.flush().map_err(compute)?;
            Ok(())
        };
        write(&mut std::io::stdout().lock())?;
        if let Some(mut f) = self.file(&format!("{name}.csv"))? {
            write(&mut f)?;
        }
        Ok(())
    }

    pub fn text(&self, name: &str, body: &str) -> Result<(), Failure> {
        print!("{body}");
        if let Some(mut f) = self.file(name)? {
            f.write_all(body.as_bytes()).map_err(compute)?;
        }
        Ok(())
    }
}

fn compute(e: impl std::fmt::Display) -> Failure {
    Failure::Compute(e.to_string())
}

/// Shortest round-trip decimal.
fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ProfileArg {
    PowerLag,
    GeometricLag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum StatArg {
    Tv,
    Kl,
}

impl From<StatArg> for Statistic {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::Tv => Statistic::Tv,
            StatArg::Kl => Statistic::Kl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ProtocolArg {
    Fresh,
    PositionPreserving,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Fresh => Protocol::Fresh,
            ProtocolArg::PositionPreserving => Protocol::PositionPreserving,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value = "power_lag")]
    pub profile: ProfileArg,
    /// Lag exponent of a power-lag source.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Lag ratio of a geometric-lag source.
    #[arg(long, default_value_t = 0.9)]
    pub rho: f64,
    #[arg(long, default_value_t = 64)]
    pub vocab: usize,
    #[arg(long, default_value_t = 4096)]
    pub l_max: usize,
    /// Uniform-noise weight of the copy source.
    #[arg(long, default_value_t = 0.3)]
    pub eta: f64,
    #[arg(long, default_value_t = 0)]
    pub source_seed: u64,
}

impl SourceArgs {
    pub fn build(&self) -> trunclab::Result<SyntheticSource> {
        let spec = match self.profile {
            ProfileArg::PowerLag => SourceSpec::power_lag(self.alpha, self.vocab, self.l_max, self.eta, self.source_seed),
            ProfileArg::GeometricLag => SourceSpec::geometric_lag(self.rho, self.vocab, self.l_max, self.eta, self.source_seed),
        };
        SyntheticSource::new(spec)
    }
}

// ---- simulate / sweep ----

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 2)]
    pub grid_lo: usize,
    #[arg(long, default_value_t = 256)]
    pub grid_hi: usize,
    #[arg(long, default_value_t = 100)]
    pub n_prefixes: usize,
    #[arg(long, default_value_t = 1025)]
    pub prefix_len: usize,
    #[arg(long, value_enum, default_value = "position_preserving")]
    pub protocol: ProtocolArg,
    #[arg(long, default_value = "synthetic")]
    pub model: String,
    #[arg(long, default_value = "synthetic")]
    pub domain: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Window-sweep records carrying both TV and KL for each (prefix, window).
pub fn simulate(a: &SimulateArgs, out: &Out) -> Result<(), Failure> {
    let src = a.source.build()?;
    let mut cfg = SweepConfig::new(pow2_grid(a.grid_lo, a.grid_hi), a.n_prefixes, a.prefix_len, Statistic::Tv);
    cfg.seed = a.seed;
    cfg.protocol = a.protocol.into();
    let tv = sweep(&src, &cfg)?;
    cfg.statistic = Statistic::Kl;
    let kl = sweep(&src, &cfg)?;
    let mut recs = io::records_from_curve(&tv, &a.model, &a.domain, a.protocol.into(), a.prefix_len);
    let kl_recs = io::records_from_curve(&kl, &a.model, &a.domain, a.protocol.into(), a.prefix_len);
    for (r, k) in recs.iter_mut().zip(kl_recs) {
        r.kl = k.kl;
    }
    let mut buf = Vec::new();
    io::emit(&recs, &mut buf)?;
    out.text("simulate.ndjson", &String::from_utf8_lossy(&buf))?;
    log::info!("{} records", recs.len());
    Ok(())
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 2)]
    pub grid_lo: usize,
    #[arg(long, default_value_t = 256)]
    pub grid_hi: usize,
    #[arg(long, default_value_t = 200)]
    pub n_prefixes: usize,
    #[arg(long, default_value_t = 1025)]
    pub prefix_len: usize,
    #[arg(long, value_enum, default_value = "tv")]
    pub statistic: StatArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn sweep_cmd(a: &SweepArgs, out: &Out) -> Result<(), Failure> {
    let src = a.source.build()?;
    let mut cfg = SweepConfig::new(pow2_grid(a.grid_lo, a.grid_hi), a.n_prefixes, a.prefix_len, a.statistic.into());
    cfg.seed = a.seed;
    let curve = sweep(&src, &cfg)?;
    let rows = curve_rows(&curve, Some(&src));
    out.table("sweep", &["w", "aggregate", "analytic_tv_tail"], &rows)
}

fn curve_rows(curve: &TruncationCurve, src: Option<&SyntheticSource>) -> Vec<Vec<String>> {
    curve
        .grid()
        .iter()
        .zip(curve.aggregate_values())
        .map(|(&w, v)| vec![w.to_string(), num(v), src.map(|s| num(s.analytic_tv_tail(w))).unwrap_or_default()])
        .collect()
}

// ---- fit ----

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Bundled coordinate fixture, e.g. tv_decay_short.
    #[arg(long, conflicts_with = "log")]
    pub fixture: Option<String>,
    /// Series within the fixture; all series when omitted.
    #[arg(long)]
    pub series: Option<String>,
    /// Measurement log (one JSON record per line).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    #[arg(long, value_enum, default_value = "tv")]
    pub statistic: StatArg,
    /// Families to fit, comma separated, or `all`.
    #[arg(long, default_value = "all")]
    pub family: String,
    /// Bootstrap resamples over prefixes (log input only); 0 disables.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn families(spec: &str) -> Result<Vec<Family>, Failure> {
    if spec == "all" {
        return Ok(Family::ALL.to_vec());
    }
    spec.split(',').map(|s| s.trim().parse::<Family>().map_err(Failure::from)).collect()
}

fn fit_row(series: &str, f: &FitResult) -> Vec<String> {
    let params: Vec<String> = f.family.param_names().iter().zip(&f.params).map(|(n, v)| format!("{n}={v}")).collect();
    let ci = f
        .ci
        .as_ref()
        .map(|c| c.iter().map(|(lo, hi)| format!("[{lo},{hi}]")).collect::<Vec<_>>().join(";"))
        .unwrap_or_default();
    let alpha = f.alpha().map(num).unwrap_or_default();
    vec![series.into(), f.family.name().into(), alpha, params.join(";"), num(f.log_rmse), num(f.aic), ci]
}

pub fn fit_cmd(a: &FitArgs, out: &Out) -> Result<(), Failure> {
    let fams = families(&a.family)?;
    let mut rows = Vec::new();
    let mut push = |name: &str, mut fits: Vec<FitResult>| {
        fits.sort_by(|x, y| x.aic.total_cmp(&y.aic));
        rows.extend(fits.iter().map(|f| fit_row(name, f)));
    };
    match (&a.fixture, &a.log) {
        (Some(key), None) => {
            let all = fixtures::load(key)?.series()?;
            let chosen: Vec<_> = all.iter().filter(|s| a.series.as_ref().map_or(true, |n| *n == s.name)).collect();
            if chosen.is_empty() {
                return Err(Failure::Invalid(format!("fixture {key} has no series {:?}", a.series)));
            }
            for s in chosen {
                let fits = fams.iter().map(|&f| s.fit(f)).collect::<trunclab::Result<Vec<_>>>()?;
                push(&s.name, fits);
            }
        }
        (None, Some(path)) => {
            let rep = io::ingest(path)?;
            let sel = Selection {
                model: a.model.clone(),
                domain: a.domain.clone(),
                protocol: a.protocol.map(Into::into),
            };
            let curve = io::window_curve(&rep.records, &sel, a.statistic.into())?;
            let fits = fams
                .iter()
                .map(|&f| if a.bootstrap > 0 { fit::bootstrap_ci(&curve, f, a.bootstrap, a.seed) } else { fit::fit(&curve, f) })
                .collect::<trunclab::Result<Vec<_>>>()?;
            push(a.domain.as_deref().unwrap_or("log"), fits);
        }
        _ => return Err(Failure::Usage("fit needs exactly one of --fixture or --log".into())),
    }
    out.table("fit", &["series", "family", "alpha", "params", "log_rmse", "aic", "ci95"], &rows)
}

// ---- policy ----

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PolicyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    /// Comma-separated policies: full, sliding, sink_recent, random_k, heavy_hitter.
    #[arg(long, value_delimiter = ',', default_value = "sliding,sink_recent,random_k,heavy_hitter")]
    pub policies: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub budget_lo: usize,
    #[arg(long, default_value_t = 512)]
    pub budget_hi: usize,
    #[arg(long, default_value_t = 100)]
    pub n_prefixes: usize,
    #[arg(long, default_value_t = 2049)]
    pub prefix_len: usize,
    #[arg(long, default_value_t = 4)]
    pub n_sinks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write per-prefix policy records to this path.
    #[arg(long)]
    pub emit_log: Option<PathBuf>,
}

pub fn policy_cmd(a: &PolicyArgs, out: &Out) -> Result<(), Failure> {
    let src = a.source.build()?;
    let policies = a.policies.iter().map(|p| p.parse::<PolicyKind>()).collect::<trunclab::Result<Vec<_>>>()?;
    let cfg = DegradeConfig {
        policies,
        budgets: pow2_grid(a.budget_lo, a.budget_hi),
        n_prefixes: a.n_prefixes,
        prefix_len: a.prefix_len,
        n_sinks: a.n_sinks,
        seed: a.seed,
    };
    let traces = degrade_sweep(&src, &cfg)?;
    let mut rows = Vec::new();
    let mut recs = Vec::new();
    for t in &traces {
        for (j, k) in t.budgets.iter().enumerate() {
            rows.push(vec![
                t.policy.name().into(),
                k.to_string(),
                num(t.median_kl[j]),
                num(t.mean_kl[j]),
                num(t.mean_nll_delta[j]),
            ]);
        }
        recs.extend(io::records_from_trace(t, "synthetic", "synthetic", Protocol::PositionPreserving, a.prefix_len));
    }
    if let Some(path) = &a.emit_log {
        io::emit_to_path(&recs, path)?;
    }
    out.table("policy", &["policy", "k", "median_kl", "mean_kl", "mean_nll_delta"], &rows)
}

// ---- window ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Target {
    Tv,
    Kl,
    Geometric,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct WindowArgs {
    #[arg(long, value_enum, default_value = "tv")]
    pub target: Target,
    /// Tolerances, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001")]
    pub eps: Vec<f64>,
    /// Sensitivity constant; taken from the power-lag source when omitted.
    #[arg(long)]
    pub c_ts: Option<f64>,
    #[arg(long)]
    pub epsilon_min: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub c_mix: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
}

pub fn window_cmd(a: &WindowArgs, out: &Out) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for &eps in &a.eps {
        let calc = match a.target {
            Target::Geometric => window::window_geometric(a.c_mix, a.source.rho, eps)?,
            t => {
                let p = match a.c_ts {
                    Some(c) => SensitivityParams::new(c, a.source.alpha, a.epsilon_min, a.source.vocab)?,
                    None => SensitivityParams::of_source(&a.source.build()?)?,
                };
                if t == Target::Tv {
                    window::window_tv(&p, eps)?
                } else {
                    window::window_kl(&p, eps)?
                }
            }
        };
        rows.push(vec![num(eps), calc.value.to_string(), num(calc.raw), format!("{:?}", calc.route), calc.in_regime.to_string()]);
    }
    out.table("window", &["eps", "window", "raw", "route", "in_regime"], &rows)
}

// ---- universal ----

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct UniversalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub block_len: usize,
    #[arg(long, default_value_t = 0.3)]
    pub alpha_min: f64,
    #[arg(long, default_value_t = 0.6)]
    pub alpha_max: f64,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub target_d: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn universal_cmd(a: &UniversalArgs, out: &Out) -> Result<(), Failure> {
    let src = a.source.build()?;
    let cfg = UniversalConfig {
        n: a.n,
        block_len: a.block_len,
        alpha_min: a.alpha_min,
        alpha_max: a.alpha_max,
        lambda: a.lambda,
        target_d: a.target_d,
        seed: a.seed,
    };
    let tr = run_universal(&src, &cfg)?;
    let rows: Vec<Vec<String>> = tr
        .outcome
        .selections
        .iter()
        .enumerate()
        .map(|(b, &j)| vec![b.to_string(), tr.windows[j].to_string(), num(tr.losses[b][j])])
        .collect();
    out.table("universal", &["block", "window", "loss"], &rows)?;
    let o = &tr.outcome;
    eprintln!(
        "windows {:?}; best fixed {}; regret {} (mixture {}), bound {}; lambda {}",
        tr.windows, tr.windows[o.best_expert], o.regret, o.mixture_regret, o.bound, tr.lambda
    );
    Ok(())
}

// ---- wz ----

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct WzArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: SourceArgs,
    /// Sequence lengths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub n_seeds: usize,
    #[arg(long, default_value_t = 0.375)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.0625)]
    pub bin_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub side_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn wz_cmd(a: &WzArgs, out: &Out) -> Result<(), Failure> {
    let src = a.source.build()?;
    let cfg = AchievabilityConfig {
        rate: a.rate,
        bin_rate: a.bin_rate,
        side_noise: a.side_noise,
        seed: a.seed,
        ..AchievabilityConfig::default()
    };
    let rows = wz::achievability_sweep(&src, &a.ns, a.source.alpha, &cfg, a.n_seeds)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.n.to_string(),
                r.window.to_string(),
                r.block_len.to_string(),
                num(r.mean_rate_bits),
                num(r.mean_kl_nats),
                num(r.mean_reference_bits),
                r.encode_failures.to_string(),
                r.decode_failures.to_string(),
                r.blocks.to_string(),
            ]
        })
        .collect();
    out.table(
        "wz",
        &["n", "window", "block_len", "rate_bits", "kl_nats", "reference_bits", "encode_failures", "decode_failures", "blocks"],
        &table,
    )?;
    match wz::loglog_slope(&rows) {
        Ok(s) => eprintln!("distortion excess slope {s} (target {})", -a.source.alpha / (a.source.alpha + 1.0)),
        Err(e) => eprintln!("no slope: {e}"),
    }
    Ok(())
}

// ---- alloc ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum RdArg {
    Gaussian,
    Binary,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AllocArgs {
    #[arg(long, default_value_t = 12)]
    pub layers: usize,
    #[arg(long, default_value_t = 1.05)]
    pub l_g: f64,
    #[arg(long, default_value_t = 0.1)]
    pub l_b: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l_ln: f64,
    #[arg(long)]
    pub skip: bool,
    /// Distortion budget on `L_g²·Σ s·D`.
    #[arg(long, default_value_t = 1.0)]
    pub budget: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub rd: RdArg,
    /// Gaussian variance, or the Bernoulli parameter of the binary family.
    #[arg(long, default_value_t = 1.0)]
    pub variance: f64,
}

pub fn alloc_cmd(a: &AllocArgs, out: &Out) -> Result<(), Failure> {
    let stack = LayerStack::uniform(a.layers, a.l_g, a.l_b, a.l_ln, a.skip)?;
    let fam = match a.rd {
        RdArg::Gaussian => RdFamily::Gaussian { variance: a.variance },
        RdArg::Binary => RdFamily::tabulated(&[1.0 - a.variance, a.variance], &wz::hamming(2), 64)?,
    };
    let families = vec![fam; a.layers];
    let l_g_sq = a.l_g * a.l_g;
    let al = alloc::water_fill(&stack, &families, a.budget, l_g_sq)?;
    let rows: Vec<Vec<String>> = (0..a.layers)
        .map(|i| {
            vec![
                (i + 1).to_string(),
                num(al.sensitivities[i]),
                num(al.distortions[i]),
                num(al.rates[i]),
                al.active[i].to_string(),
            ]
        })
        .collect();
    out.table("alloc", &["layer", "sensitivity", "distortion", "rate_bits", "active"], &rows)?;
    let uniform = alloc::uniform_allocation_rate(&stack, &families, a.budget, l_g_sq)?;
    eprintln!(
        "total rate {} bits (uniform {uniform}); lambda {}; kkt residual {}; sensitivity ratio {}",
        al.total_rate,
        al.lambda,
        al.kkt_residual(&families),
        al.sensitivities[0] / al.sensitivities[a.layers - 1]
    );
    Ok(())
}

// ---- martlab ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MemArg {
    LongMemory,
    Iid,
    Parity,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct MartArgs {
    #[arg(long, value_enum, default_value = "long_memory")]
    pub kind: MemArg,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    #[arg(long, default_value_t = 4.0)]
    pub j_max: f64,
    #[arg(long, default_value_t = 200)]
    pub count: usize,
    /// Block length for the envelopes.
    #[arg(long, default_value_t = 64)]
    pub block: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn mart_cmd(a: &MartArgs, out: &Out) -> Result<(), Failure> {
    let kind = match a.kind {
        MemArg::LongMemory => MemoryKind::LongMemory { alpha: a.alpha },
        MemArg::Iid => MemoryKind::Iid,
        MemArg::Parity => MemoryKind::Parity,
    };
    let seqs = martingale::generate_many(kind, a.n, a.j_max, a.seed, a.count)?;
    let grid = pow2_grid(2, a.n / 10);
    let mut rows = Vec::new();
    for &b in &grid {
        rows.push(vec![b.to_string(), num(martingale::block_variance(&seqs, b)?)]);
    }
    out.table("martlab", &["block", "block_variance"], &rows)?;
    let slope = martingale::block_variance_slope(&seqs, &grid)?;
    let params = match a.kind {
        MemArg::LongMemory => EnvelopeParams::longmem(a.alpha, a.j_max, a.n),
        _ => EnvelopeParams::iid(a.j_max),
    };
    let env = martingale::deviation_envelopes(&seqs, a.block, a.delta, &params)?;
    eprintln!(
        "block variance slope {slope}; azuma {} freedman {} empirical {} (coverage {} / {})",
        env.azuma, env.freedman, env.empirical, env.coverage_azuma, env.coverage_freedman
    );
    Ok(())
}

// ---- ingest / report ----

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct IngestArgs {
    /// Measurement log to validate.
    pub path: PathBuf,
}

pub fn ingest_cmd(a: &IngestArgs, out: &Out) -> Result<(), Failure> {
    let rep = io::ingest(&a.path)?;
    let mut rows = Vec::new();
    for (model, domain, protocol) in io::groups(&rep.records) {
        let of = |r: &&MeasurementRecord| r.model == model && r.domain == domain && r.protocol == protocol;
        let n = rep.records.iter().filter(of).count();
        let prefixes: std::collections::BTreeSet<u64> = rep.records.iter().filter(of).map(|r| r.prefix_id).collect();
        rows.push(vec![model, domain, format!("{protocol:?}"), n.to_string(), prefixes.len().to_string()]);
    }
    out.table("ingest", &["model", "domain", "protocol", "records", "prefixes"], &rows)?;
    for r in &rep.rejected {
        eprintln!("rejected line {}: {}", r.line, r.reason);
    }
    eprintln!(
        "{} lines, {} accepted, {} rejected, {} duplicates",
        rep.lines,
        rep.records.len(),
        rep.rejected.len(),
        rep.duplicates.len()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Format {
    Markdown,
    Json,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReportArgs {
    #[arg(long, value_enum, default_value = "markdown")]
    pub format: Format,
}

pub fn report_cmd(a: &ReportArgs, out: &Out) -> Result<(), Failure> {
    let rep = fixtures::report()?;
    match a.format {
        Format::Json => {
            let s = serde_json::to_string_pretty(&rep).map_err(compute)? + "\n";
            out.text("report.json", &s)
        }
        Format::Markdown => out.text("report.md", &markdown(&rep)),
    }
}

fn markdown(rep: &fixtures::FixtureReport) -> String {
    use std::fmt::Write as _;
    let mut s = String::from("# Fixture fits\n\n## Decay fits\n\n");
    s += "| fixture | series | alpha | C | power log-RMSE | exp log-RMSE | power AIC | exp AIC |\n";
    s += "|---|---|---|---|---|---|---|---|\n";
    for f in &rep.fits {
        let _ = writeln!(
            s,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.3} | {:.3} |",
            f.fixture, f.series, f.power.params[1], f.power.params[0], f.power.log_rmse, f.exponential.log_rmse, f.power.aic, f.exponential.aic
        );
    }
    s += "\n## Reported against reproduced\n\n| fixture | series | quantity | reported | reproduced | difference |\n|---|---|---|---|---|---|\n";
    for c in &rep.comparisons {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.4} | {:.4} |",
            c.fixture,
            c.series,
            c.quantity,
            c.reported,
            c.reproduced,
            c.reproduced - c.reported
        );
    }
    s += "\n## KL against squared TV, line through the origin\n\n| series | slope | R² |\n|---|---|---|\n";
    for l in &rep.kl_vs_tv2 {
        let _ = writeln!(s, "| {} | {:.4} | {:.5} |", l.series, l.slope, l.r_squared);
    }
    for t in &rep.tables {
        let _ = write!(s, "\n## {}\n\n{}\n\n| {} |\n|{}\n", t.key, t.title, t.header.join(" | "), "---|".repeat(t.header.len()));
        for r in &t.rows {
            let _ = writeln!(s, "| {} |", r.join(" | "));
        }
    }
    s
}
