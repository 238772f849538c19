//! Trace files: CSV with a `#`-prefixed header block, plus an NDJSON summary
//! across replications.
//!
//! ```text
//! # reference: population
//! # seed: 42
//! algorithm,k,excess_risk_avg,excess_risk_last,wall_ns
//! avsgd,1,1.2e0,1.2e0,0
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::TraceRecord;

pub const COLUMNS: [&str; 5] = ["algorithm", "k", "excess_risk_avg", "excess_risk_last", "wall_ns"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceFile {
    /// Ordered `key: value` header lines.
    pub header: Vec<(String, String)>,
    pub records: Vec<TraceRecord>,
}

impl TraceFile {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Records of one algorithm, in file order.
    pub fn series(&self, algorithm: &str) -> Vec<&TraceRecord> {
        self.records
            .iter()
            .filter(|r| r.algorithm == algorithm)
            .collect()
    }

    /// Finite values and strictly increasing `k` within each algorithm.
    pub fn validate(&self) -> Result<()> {
        let mut last: HashMap<&str, u64> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if !(r.excess_risk_avg.is_finite() && r.excess_risk_last.is_finite()) {
                return Err(Error::invalid(format!("record {i}: non-finite excess risk")));
            }
            if r.algorithm.is_empty() || r.algorithm.contains([',', '\n', '\r', '"']) {
                return Err(Error::invalid(format!("record {i}: bad algorithm id")));
            }
            if let Some(&prev) = last.get(r.algorithm.as_str()) {
                if r.k <= prev {
                    return Err(Error::invalid(format!(
                        "record {i}: k = {} does not increase for {}",
                        r.k, r.algorithm
                    )));
                }
            }
            last.insert(&r.algorithm, r.k);
        }
        for (k, v) in &self.header {
            if k.contains([':', '\n', '\r']) || k.trim() != k || k.is_empty() || v.contains(['\n', '\r']) {
                return Err(Error::invalid(format!("bad header entry {k:?}")));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        self.validate()?;
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "# {k}: {v}");
        }
        s.push_str(&COLUMNS.join(","));
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{:e},{:e},{}",
                r.algorithm, r.k, r.excess_risk_avg, r.excess_risk_last, r.wall_ns
            );
        }
        Ok(s)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.to_text()?.as_bytes())?;
        Ok(())
    }

    /// Parses a trace file. Record seeds come from the `seed` header entry
    /// (0 when absent).
    pub fn parse(text: &str) -> Result<Self> {
        let mut header = Vec::new();
        let mut lines = text.lines().enumerate();
        let mut saw_columns = false;
        for (i, line) in lines.by_ref() {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.split_once(':').ok_or_else(|| {
                    Error::invalid(format!("line {}: header entry without ':'", i + 1))
                })?;
                header.push((k.trim().to_string(), v.trim().to_string()));
            } else {
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != COLUMNS {
                    return Err(Error::invalid(format!(
                        "line {}: expected column header {:?}",
                        i + 1,
                        COLUMNS.join(",")
                    )));
                }
                saw_columns = true;
                break;
            }
        }
        if !saw_columns {
            return Err(Error::invalid("trace file has no column header"));
        }
        let seed = match header.iter().find(|(k, _)| k == "seed") {
            Some((_, v)) => v
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("bad seed {v:?}")))?,
            None => 0,
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |what: &str| Error::invalid(format!("line {}: bad {what}", i + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != COLUMNS.len() {
                return Err(bad("field count"));
            }
            records.push(TraceRecord {
                algorithm: f[0].to_string(),
                k: f[1].parse().map_err(|_| bad("k"))?,
                excess_risk_avg: f[2].parse().map_err(|_| bad("excess_risk_avg"))?,
                excess_risk_last: f[3].parse().map_err(|_| bad("excess_risk_last"))?,
                wall_ns: f[4].parse().map_err(|_| bad("wall_ns"))?,
                seed,
            });
        }
        let t = TraceFile { header, records };
        t.validate()?;
        Ok(t)
    }
}

/// Across-replication statistics of one `(algorithm, k)` point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub k: u64,
    pub replications: usize,
    pub mean_avg: f64,
    pub q05_avg: f64,
    pub q25_avg: f64,
    pub median_avg: f64,
    pub q75_avg: f64,
    pub q95_avg: f64,
    pub mean_last: f64,
    pub median_last: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Summarizes traces of several replications, grouped by algorithm (in order
/// of first appearance) and `k`.
pub fn summarize<'a, I>(traces: I) -> Vec<SummaryRow>
where
    I: IntoIterator<Item = &'a [TraceRecord]>,
{
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, BTreeMap<u64, (Vec<f64>, Vec<f64>)>> = HashMap::new();
    for trace in traces {
        for r in trace {
            if !groups.contains_key(&r.algorithm) {
                order.push(r.algorithm.clone());
            }
            let e = groups
                .entry(r.algorithm.clone())
                .or_default()
                .entry(r.k)
                .or_default();
            e.0.push(r.excess_risk_avg);
            e.1.push(r.excess_risk_last);
        }
    }
    let mut rows = Vec::new();
    for alg in order {
        for (k, (mut avg, mut last)) in groups.remove(&alg).unwrap_or_default() {
            avg.sort_by(f64::total_cmp);
            last.sort_by(f64::total_cmp);
            rows.push(SummaryRow {
                algorithm: alg.clone(),
                k,
                replications: avg.len(),
                mean_avg: mean(&avg),
                q05_avg: quantile(&avg, 0.05),
                q25_avg: quantile(&avg, 0.25),
                median_avg: quantile(&avg, 0.5),
                q75_avg: quantile(&avg, 0.75),
                q95_avg: quantile(&avg, 0.95),
                mean_last: mean(&last),
                median_last: quantile(&last, 0.5),
            });
        }
    }
    rows
}

pub fn write_summary<W: Write>(mut out: W, rows: &[SummaryRow]) -> Result<()> {
    for r in rows {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Numerical(format!("cannot serialize summary: {e}")))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Least-squares slope of `log v` against `log k` over points with
/// `k_min <= k <= k_max` and `v > 0`. `None` with fewer than two points.
pub fn loglog_slope(points: &[(u64, f64)], k_min: u64, k_max: u64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(k, v)| k >= k_min && k <= k_max && v > 0.0)
        .map(|&(k, v)| ((k as f64).ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
