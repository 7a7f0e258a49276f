//! Measurement logs: one JSON record per line, validated on ingest.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyKind, PolicyTrace, DEFAULT_SINKS};
use crate::sweep::{Aggregate, Protocol, Statistic, TruncationCurve};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest rejected fraction an ingest tolerates.
pub const MAX_REJECT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    WindowSweep,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementRecord {
    pub schema_version: u32,
    pub model: String,
    pub domain: String,
    pub protocol: Protocol,
    pub prefix_id: u64,
    pub prefix_len: usize,
    pub kind: RecordKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll_full: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nll_policy: Option<f64>,
    /// Per-position attention scores, for heavy-hitter runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    pub tool_version: String,
}

/// Identity used for deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub model: String,
    pub domain: String,
    pub protocol: Protocol,
    pub prefix_id: u64,
    pub kind: RecordKind,
    pub policy: Option<PolicyKind>,
    pub size: usize,
}

impl MeasurementRecord {
    pub fn window(model: &str, domain: &str, protocol: Protocol, prefix_id: u64, prefix_len: usize, w: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            model: model.into(),
            domain: domain.into(),
            protocol,
            prefix_id,
            prefix_len,
            kind: RecordKind::WindowSweep,
            w: Some(w),
            policy: None,
            budget_k: None,
            tv: None,
            kl: None,
            nll_full: None,
            nll_policy: None,
            scores: None,
            tool_version: crate::VERSION.into(),
        }
    }

    pub fn policy(
        model: &str,
        domain: &str,
        protocol: Protocol,
        prefix_id: u64,
        prefix_len: usize,
        policy: PolicyKind,
        budget_k: usize,
    ) -> Self {
        Self {
            kind: RecordKind::Policy,
            w: None,
            policy: Some(policy),
            budget_k: Some(budget_k),
            ..Self::window(model, domain, protocol, prefix_id, prefix_len, 0)
        }
    }

    /// Window or budget, whichever the kind carries.
    pub fn size(&self) -> Option<usize> {
        match self.kind {
            RecordKind::WindowSweep => self.w,
            RecordKind::Policy => self.budget_k,
        }
    }

    pub fn key(&self) -> RecordKey {
        RecordKey {
            model: self.model.clone(),
            domain: self.domain.clone(),
            protocol: self.protocol,
            prefix_id: self.prefix_id,
            kind: self.kind,
            policy: self.policy,
            size: self.size().unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.model.is_empty() || self.domain.is_empty() {
            return bad("empty model or domain".into());
        }
        match self.kind {
            RecordKind::WindowSweep => {
                if self.w.is_none() || self.policy.is_some() || self.budget_k.is_some() {
                    return bad("window_sweep record needs w and no policy/budget_k".into());
                }
            }
            RecordKind::Policy => {
                if self.w.is_some() || self.policy.is_none() || self.budget_k.is_none() {
                    return bad("policy record needs policy and budget_k and no w".into());
                }
            }
        }
        let size = self.size().unwrap_or(0);
        if size == 0 {
            return bad("window or budget must be at least 1".into());
        }
        if self.prefix_len <= size {
            return bad(format!("prefix_len {} must exceed window/budget {size}", self.prefix_len));
        }
        for (name, v) in [("tv", self.tv), ("kl", self.kl)] {
            if let Some(x) = v {
                if !(x >= 0.0 && x.is_finite()) {
                    return bad(format!("{name} = {x} must be finite and non-negative"));
                }
            }
        }
        if let Some(t) = self.tv {
            if t > 1.0 {
                return bad(format!("tv = {t} exceeds 1"));
            }
        }
        for (name, v) in [("nll_full", self.nll_full), ("nll_policy", self.nll_policy)] {
            if v.is_some_and(|x| !x.is_finite()) {
                return bad(format!("{name} is not finite"));
            }
        }
        if let Some(s) = &self.scores {
            if s.iter().any(|x| !x.is_finite()) {
                return bad("non-finite score".into());
            }
            if s.len() > self.prefix_len {
                return bad(format!("{} scores for a prefix of {}", s.len(), self.prefix_len));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub records: Vec<MeasurementRecord>,
    pub rejected: Vec<Rejection>,
    /// Line numbers of records dropped as repeats of an earlier key.
    pub duplicates: Vec<usize>,
    /// Non-blank lines read.
    pub lines: usize,
}

impl IngestReport {
    pub fn reject_fraction(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.rejected.len() as f64 / self.lines as f64
        }
    }
}

fn parse_line(line: &str) -> Result<MeasurementRecord> {
    let r: MeasurementRecord = serde_json::from_str(line)?;
    r.validate()?;
    Ok(r)
}

/// Reads newline-delimited records, keeping the first of each key.
/// Fails when more than 1% of the non-blank lines are rejected.
pub fn ingest_reader(reader: impl BufRead) -> Result<IngestReport> {
    let mut out = IngestReport::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        out.lines += 1;
        match parse_line(trimmed) {
            Ok(r) => {
                if seen.insert(r.key()) {
                    out.records.push(r);
                } else {
                    out.duplicates.push(i + 1);
                }
            }
            Err(e) => out.rejected.push(Rejection { line: i + 1, reason: e.to_string() }),
        }
    }
    if out.lines == 0 {
        log::warn!("measurement log is empty");
    }
    for r in &out.rejected {
        log::warn!("line {}: {}", r.line, r.reason);
    }
    if !out.duplicates.is_empty() {
        log::warn!("{} duplicate records dropped", out.duplicates.len());
    }
    if out.reject_fraction() > MAX_REJECT_FRACTION {
        let listed: Vec<String> = out.rejected.iter().take(10).map(|r| format!("line {}: {}", r.line, r.reason)).collect();
        return Err(Error::Validation(format!(
            "{} of {} lines rejected ({:.1}%): {}",
            out.rejected.len(),
            out.lines,
            100.0 * out.reject_fraction(),
            listed.join("; ")
        )));
    }
    Ok(out)
}

pub fn ingest(path: impl AsRef<Path>) -> Result<IngestReport> {
    ingest_reader(BufReader::new(File::open(path)?))
}

/// Writes one record per line. Floats use the shortest round-trip form.
pub fn emit(records: &[MeasurementRecord], mut out: impl Write) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_to_path(records: &[MeasurementRecord], path: impl AsRef<Path>) -> Result<()> {
    emit(records, std::io::BufWriter::new(File::create(path)?))
}

/// Restricts records to one model, domain and protocol; `None` matches any.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model: Option<String>,
    pub domain: Option<String>,
    pub protocol: Option<Protocol>,
}

impl Selection {
    pub fn matches(&self, r: &MeasurementRecord) -> bool {
        self.model.as_ref().map_or(true, |m| *m == r.model)
            && self.domain.as_ref().map_or(true, |d| *d == r.domain)
            && self.protocol.map_or(true, |p| p == r.protocol)
    }
}

/// Distinct (model, domain, protocol) groups present.
pub fn groups(records: &[MeasurementRecord]) -> Vec<(String, String, Protocol)> {
    let set: BTreeSet<_> = records.iter().map(|r| (r.model.clone(), r.domain.clone(), r.protocol)).collect();
    set.into_iter().collect()
}

fn single_group<'a>(records: &'a [MeasurementRecord], sel: &Selection, kind: RecordKind) -> Result<Vec<&'a MeasurementRecord>> {
    let picked: Vec<&MeasurementRecord> = records.iter().filter(|r| r.kind == kind && sel.matches(r)).collect();
    if picked.is_empty() {
        return Err(Error::Empty(format!("no {kind:?} records match {sel:?}")));
    }
    let owned: Vec<MeasurementRecord> = picked.iter().map(|r| (*r).clone()).collect();
    let g = groups(&owned);
    if g.len() > 1 {
        return Err(Error::Validation(format!("selection spans {} groups {g:?}; narrow it", g.len())));
    }
    Ok(picked)
}

/// Prefix rows over a size grid. Every prefix must cover every size.
fn rows_by_prefix(picked: &[&MeasurementRecord], value: impl Fn(&MeasurementRecord) -> Option<f64>) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let grid: Vec<usize> = picked.iter().filter_map(|r| r.size()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut by_prefix: BTreeMap<u64, BTreeMap<usize, f64>> = BTreeMap::new();
    for r in picked {
        let v = value(r).ok_or_else(|| Error::Validation(format!("prefix {} size {:?} lacks the statistic", r.prefix_id, r.size())))?;
        by_prefix.entry(r.prefix_id).or_default().insert(r.size().unwrap_or(0), v);
    }
    let mut rows = Vec::with_capacity(by_prefix.len());
    for (id, m) in by_prefix {
        if m.len() != grid.len() {
            return Err(Error::Validation(format!("prefix {id} covers {} of {} grid points", m.len(), grid.len())));
        }
        rows.push(m.into_values().collect());
    }
    Ok((grid, rows))
}

/// Window-sweep curve for one group. TV curves aggregate by mean, KL by median.
pub fn window_curve(records: &[MeasurementRecord], sel: &Selection, statistic: Statistic) -> Result<TruncationCurve> {
    let picked = single_group(records, sel, RecordKind::WindowSweep)?;
    let (grid, rows) = rows_by_prefix(&picked, |r| match statistic {
        Statistic::Tv => r.tv,
        Statistic::Kl => r.kl,
    })?;
    let aggregate = match statistic {
        Statistic::Tv => Aggregate::Mean,
        Statistic::Kl => Aggregate::Median,
    };
    TruncationCurve::new(grid, rows, statistic, aggregate)
}

/// One trace per policy found in the selected group.
pub fn policy_traces(records: &[MeasurementRecord], sel: &Selection) -> Result<Vec<PolicyTrace>> {
    let picked = single_group(records, sel, RecordKind::Policy)?;
    let kinds: BTreeSet<PolicyKind> = picked.iter().filter_map(|r| r.policy).collect();
    let mut out = Vec::new();
    for kind in kinds {
        let these: Vec<&MeasurementRecord> = picked.iter().copied().filter(|r| r.policy == Some(kind)).collect();
        let (budgets, kl_rows) = rows_by_prefix(&these, |r| r.kl)?;
        let have_nll = these.iter().all(|r| r.nll_full.is_some() && r.nll_policy.is_some());
        let nll_rows = if have_nll {
            rows_by_prefix(&these, |r| Some(r.nll_policy? - r.nll_full?))?.1
        } else {
            Vec::new()
        };
        out.push(PolicyTrace::from_rows(kind, DEFAULT_SINKS, budgets, kl_rows, &nll_rows)?);
    }
    Ok(out)
}

/// Window-sweep records from a curve, one per (prefix, window).
pub fn records_from_curve(
    curve: &TruncationCurve,
    model: &str,
    domain: &str,
    protocol: Protocol,
    prefix_len: usize,
) -> Vec<MeasurementRecord> {
    let mut out = Vec::new();
    for (i, row) in curve.per_prefix().iter().enumerate() {
        for (&w, &v) in curve.grid().iter().zip(row) {
            let mut r = MeasurementRecord::window(model, domain, protocol, i as u64, prefix_len, w);
            match curve.statistic {
                Statistic::Tv => r.tv = Some(v),
                Statistic::Kl => r.kl = Some(v),
            }
            out.push(r);
        }
    }
    out
}

/// Policy records from a trace built from per-prefix rows.
pub fn records_from_trace(
    trace: &PolicyTrace,
    model: &str,
    domain: &str,
    protocol: Protocol,
    prefix_len: usize,
) -> Vec<MeasurementRecord> {
    let mut out = Vec::new();
    for (i, row) in trace.per_prefix_kl.iter().enumerate() {
        for (&k, &v) in trace.budgets.iter().zip(row) {
            let mut r = MeasurementRecord::policy(model, domain, protocol, i as u64, prefix_len, trace.policy, k);
            r.kl = Some(v);
            out.push(r);
        }
    }
    out
}
