//! Bundled measurement coordinates and the fits reported with them.
//!
//! Coordinate files have the columns `series,x,y`; the first line of every
//! file is a `#` comment describing the measurement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_points, Family, FitResult};
use crate::io::MeasurementRecord;
use crate::sweep::{Aggregate, Protocol, Statistic, TruncationCurve};

const SOURCES: [(&str, &str); 10] = [
    ("tv_decay_short", include_str!("../fixtures/tv_decay_short.csv")),
    ("sink_recent_kl", include_str!("../fixtures/sink_recent_kl.csv")),
    ("policy_degradation", include_str!("../fixtures/policy_degradation.csv")),
    ("protocol_ablation", include_str!("../fixtures/protocol_ablation.csv")),
    ("tv_decay_long", include_str!("../fixtures/tv_decay_long.csv")),
    ("kl_vs_tv2", include_str!("../fixtures/kl_vs_tv2.csv")),
    ("exponents_cross_model", include_str!("../fixtures/exponents_cross_model.csv")),
    ("exponents_cross_domain", include_str!("../fixtures/exponents_cross_domain.csv")),
    ("random_k_medians", include_str!("../fixtures/random_k_medians.csv")),
    ("reported_fits", include_str!("../fixtures/reported_fits.csv")),
];

/// Fixtures holding decay curves that are fitted in log space.
pub const DECAY_FIXTURES: [&str; 5] =
    ["tv_decay_short", "sink_recent_kl", "policy_degradation", "protocol_ablation", "tv_decay_long"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub key: String,
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn keys() -> Vec<&'static str> {
    SOURCES.iter().map(|(k, _)| *k).collect()
}

/// Parses CSV text with one leading `#` comment line.
pub fn parse(key: &str, text: &str) -> Result<Fixture> {
    let title = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix('#'))
        .map(|s| s.trim().to_string())
        .ok_or_else(|| Error::Validation(format!("fixture {key}: missing comment line")))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rdr.headers()?.iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok(Fixture { key: key.into(), title, header, rows })
}

pub fn load(key: &str) -> Result<Fixture> {
    let (_, text) = SOURCES
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| Error::InvalidParam(format!("unknown fixture {key:?}; known: {}", keys().join(", "))))?;
    parse(key, text)
}

fn num(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Validation(format!("not a number: {s:?}")))
}

impl Fixture {
    pub fn column(&self, name: &str) -> Result<Vec<&str>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidParam(format!("fixture {} has no column {name:?}", self.key)))?;
        Ok(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    /// Series in file order. Requires the `series,x,y` layout.
    pub fn series(&self) -> Result<Vec<Series>> {
        if self.header != ["series", "x", "y"] {
            return Err(Error::Validation(format!("fixture {} is not a series file", self.key)));
        }
        let mut out: Vec<Series> = Vec::new();
        for r in &self.rows {
            let (x, y) = (num(&r[1])?, num(&r[2])?);
            match out.iter_mut().find(|s| s.name == r[0]) {
                Some(s) => {
                    s.x.push(x);
                    s.y.push(y);
                }
                None => out.push(Series { name: r[0].clone(), x: vec![x], y: vec![y] }),
            }
        }
        Ok(out)
    }
}

pub fn series(key: &str, name: &str) -> Result<Series> {
    load(key)?
        .series()?
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::InvalidParam(format!("fixture {key} has no series {name:?}")))
}

/// A reported quantity from `reported_fits`.
pub fn reported(fixture: &str, series: &str, quantity: &str) -> Result<f64> {
    let f = load("reported_fits")?;
    f.rows
        .iter()
        .find(|r| r[0] == fixture && r[1] == series && r[2] == quantity)
        .ok_or_else(|| Error::InvalidParam(format!("nothing reported for {fixture}/{series}/{quantity}")))
        .and_then(|r| num(&r[3]))
}

impl Series {
    pub fn grid(&self) -> Result<Vec<usize>> {
        self.x
            .iter()
            .map(|&x| {
                if x >= 1.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::Validation(format!("series {}: {x} is not a window size", self.name)))
                }
            })
            .collect()
    }

    /// The series as a single-row curve.
    pub fn curve(&self, statistic: Statistic, aggregate: Aggregate) -> Result<TruncationCurve> {
        TruncationCurve::from_aggregates(self.grid()?, self.y.clone(), statistic, aggregate)
    }

    pub fn fit(&self, family: Family) -> Result<FitResult> {
        fit_points(&self.x, &self.y, family)
    }

    /// Per-prefix window records whose mean and median at each window both
    /// equal the series value. Prefix `i` gets the factor
    /// `1 + spread·(2m − (n−1))/(n−1)` with `m = (i + 7j) mod n` at grid index `j`.
    pub fn expand(
        &self,
        model: &str,
        domain: &str,
        protocol: Protocol,
        statistic: Statistic,
        n_prefixes: usize,
        prefix_len: usize,
        spread: f64,
    ) -> Result<Vec<MeasurementRecord>> {
        if n_prefixes < 2 || !(0.0..1.0).contains(&spread) {
            return Err(Error::InvalidParam("need ≥ 2 prefixes and spread in [0, 1)".into()));
        }
        let grid = self.grid()?;
        let half = (n_prefixes - 1) as f64;
        let mut out = Vec::with_capacity(n_prefixes * grid.len());
        for i in 0..n_prefixes {
            for (j, (&w, &y)) in grid.iter().zip(&self.y).enumerate() {
                let m = ((i + 7 * j) % n_prefixes) as f64;
                let v = y * (1.0 + spread * (2.0 * m - half) / half);
                let mut r = MeasurementRecord::window(model, domain, protocol, i as u64, prefix_len, w);
                match statistic {
                    Statistic::Tv => r.tv = Some(v),
                    Statistic::Kl => r.kl = Some(v),
                }
                out.push(r);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub fixture: String,
    pub series: String,
    pub power: FitResult,
    pub exponential: FitResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub fixture: String,
    pub series: String,
    pub quantity: String,
    pub reported: f64,
    pub reproduced: f64,
}

impl Comparison {
    pub fn abs_diff(&self) -> f64 {
        (self.reproduced - self.reported).abs()
    }
}

/// Least squares line through the origin with its uncentred R².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginLine {
    pub series: String,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn origin_line(s: &Series) -> OriginLine {
    let sxy: f64 = s.x.iter().zip(&s.y).map(|(x, y)| x * y).sum();
    let sxx: f64 = s.x.iter().map(|x| x * x).sum();
    let syy: f64 = s.y.iter().map(|y| y * y).sum();
    let slope = sxy / sxx;
    let rss: f64 = s.x.iter().zip(&s.y).map(|(x, y)| (y - slope * x).powi(2)).sum();
    OriginLine { series: s.name.clone(), slope, r_squared: 1.0 - rss / syy }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureReport {
    pub fits: Vec<SeriesFit>,
    pub comparisons: Vec<Comparison>,
    pub kl_vs_tv2: Vec<OriginLine>,
    /// Summary tables shipped as printed.
    pub tables: Vec<Fixture>,
}

impl FixtureReport {
    pub fn fit(&self, fixture: &str, series: &str) -> Option<&SeriesFit> {
        self.fits.iter().find(|f| f.fixture == fixture && f.series == series)
    }

    pub fn comparison(&self, fixture: &str, series: &str, quantity: &str) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.fixture == fixture && c.series == series && c.quantity == quantity)
    }
}

/// Fits every decay fixture and lines each reported quantity up with its
/// reproduction. Exponent ratios divide a KL exponent by the short-window TV
/// exponent of the same domain.
pub fn report() -> Result<FixtureReport> {
    let mut fits = Vec::new();
    for key in DECAY_FIXTURES {
        for s in load(key)?.series()? {
            fits.push(SeriesFit {
                fixture: key.into(),
                series: s.name.clone(),
                power: s.fit(Family::Power)?,
                exponential: s.fit(Family::Exponential)?,
            });
        }
    }
    let find = |fx: &str, se: &str| {
        fits.iter()
            .find(|f: &&SeriesFit| f.fixture == fx && f.series == se)
            .ok_or_else(|| Error::Validation(format!("reported quantity for unknown series {fx}/{se}")))
    };
    let mut comparisons = Vec::new();
    let rep = load("reported_fits")?;
    for r in &rep.rows {
        let (fx, se, q) = (&r[0], &r[1], r[2].as_str());
        let f = find(fx, se)?;
        let reproduced = match q {
            "alpha" => f.power.params[1],
            "power_log_rmse" => f.power.log_rmse,
            "exp_log_rmse" => f.exponential.log_rmse,
            "exponent_ratio" => crate::fit::exponent_ratio(&find("tv_decay_short", se)?.power, &f.power)?,
            _ => return Err(Error::Validation(format!("unknown reported quantity {q:?}"))),
        };
        comparisons.push(Comparison {
            fixture: fx.clone(),
            series: se.clone(),
            quantity: q.into(),
            reported: num(&r[3])?,
            reproduced,
        });
    }
    // Random-K over sink-plus-recent at the largest budget, from the raw medians.
    let rk = load("random_k_medians")?;
    let last = rk.rows.last().ok_or_else(|| Error::Empty("random_k_medians".into()))?;
    let col = |name: &str| rk.header.iter().position(|h| h == name).map(|j| num(&last[j]));
    for (dom, printed) in [("natural", 85.0), ("code", 30.0)] {
        let sr = col(&format!("sink_recent_{dom}")).ok_or_else(|| Error::Validation("random_k_medians layout".into()))??;
        let rnd = col(&format!("random_k_{dom}")).ok_or_else(|| Error::Validation("random_k_medians layout".into()))??;
        comparisons.push(Comparison {
            fixture: "random_k_medians".into(),
            series: dom.into(),
            quantity: format!("random_k_ratio_at_{}", last[0]),
            reported: printed,
            reproduced: rnd / sr,
        });
    }
    let kl_vs_tv2 = load("kl_vs_tv2")?.series()?.iter().map(origin_line).collect();
    let tables = ["exponents_cross_model", "exponents_cross_domain", "random_k_medians"]
        .into_iter()
        .map(load)
        .collect::<Result<_>>()?;
    Ok(FixtureReport { fits, comparisons, kl_vs_tv2, tables })
}
