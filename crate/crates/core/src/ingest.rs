//! CSV ingestion with NA tokens.
//!
//! A header row is required. Every column other than the target is a
//! covariate. NA cells become unobserved entries; rows with a missing target
//! are dropped and counted. Optional standardization uses observed entries
//! only.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{MaskedVector, MissingnessModel, Observation, Warning};
use crate::error::{Error, Result};

pub const DEFAULT_NA_TOKENS: [&str; 4] = ["NA", "NaN", "", "null"];

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub na_tokens: Vec<String>,
    pub target: String,
    pub scale: bool,
}

impl IngestOptions {
    pub fn new(target: impl Into<String>) -> Self {
        IngestOptions {
            na_tokens: DEFAULT_NA_TOKENS.iter().map(|s| s.to_string()).collect(),
            target: target.into(),
            scale: false,
        }
    }

    pub fn scaled(mut self, scale: bool) -> Self {
        self.scale = scale;
        self
    }

    fn is_na(&self, cell: &str) -> bool {
        self.na_tokens.iter().any(|t| t == cell)
    }
}

/// Per-column standardization learned from the training file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Scaling {
    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.stds) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn unscale_target(&self, y: f64) -> f64 {
        y * self.target_std + self.target_mean
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub feature_names: Vec<String>,
    pub target: String,
    pub observations: Vec<Observation>,
    pub miss: MissingnessModel,
    pub scaling: Option<Scaling>,
    /// Rows dropped because their target was NA.
    pub rejected_rows: usize,
    pub warnings: Vec<Warning>,
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths {
            pos, expected_len, len,
        } => Error::invalid(format!(
            "line {}: expected {expected_len} fields, found {len}",
            pos.map(|p| p.line()).unwrap_or(0)
        )),
        csv::ErrorKind::Utf8 { pos, .. } => Error::invalid(format!(
            "line {}: invalid UTF-8",
            pos.map(|p| p.line()).unwrap_or(0)
        )),
        other => Error::invalid(format!("malformed CSV: {other:?}")),
    }
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        Error::invalid(format!("line {line}, column {column}: cannot parse {cell:?}"))
    })?;
    if !v.is_finite() {
        return Err(Error::invalid(format!(
            "line {line}, column {column}: non-finite value {cell:?}"
        )));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn headers<R: Read>(rdr: &mut csv::Reader<R>) -> Result<Vec<String>> {
    let h = rdr.headers().map_err(csv_error)?;
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(Error::invalid("empty file: no header row"));
    }
    let names: Vec<String> = h.iter().map(str::to_string).collect();
    let mut seen = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if let Some(prev) = seen.insert(n.as_str(), i) {
            return Err(Error::invalid(format!(
                "duplicate column name {n:?} (columns {prev} and {i})"
            )));
        }
    }
    Ok(names)
}

pub fn ingest_csv(path: impl AsRef<Path>, opts: &IngestOptions) -> Result<Ingested> {
    ingest_reader(File::open(path)?, opts)
}

pub fn ingest_reader<R: Read>(input: R, opts: &IngestOptions) -> Result<Ingested> {
    let mut rdr = reader(input);
    let names = headers(&mut rdr)?;
    let target_idx = names
        .iter()
        .position(|n| *n == opts.target)
        .ok_or_else(|| Error::invalid(format!("target column {:?} not found", opts.target)))?;
    let feature_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_idx)
        .map(|(_, n)| n.clone())
        .collect();
    let d = feature_names.len();
    if d == 0 {
        return Err(Error::invalid("no covariate columns besides the target"));
    }

    let mut rows: Vec<(Vec<Option<f64>>, f64)> = Vec::new();
    let mut rejected = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let mut cells = Vec::with_capacity(d);
        let mut y = None;
        for (i, cell) in rec.iter().enumerate() {
            let value = if opts.is_na(cell) {
                None
            } else {
                Some(parse_cell(cell, line, &names[i])?)
            };
            if i == target_idx {
                y = value;
            } else {
                cells.push(value);
            }
        }
        match y {
            Some(y) => rows.push((cells, y)),
            None => rejected += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid(if rejected > 0 {
            format!("all {rejected} rows have a missing target")
        } else {
            "empty file: no data rows".to_string()
        }));
    }

    let mut warnings = Vec::new();
    let scaling = if opts.scale {
        Some(fit_scaling(&rows, d, &feature_names, &mut warnings)?)
    } else {
        None
    };

    let observations = rows
        .into_iter()
        .map(|(mut cells, mut y)| {
            if let Some(s) = &scaling {
                for ((c, m), sd) in cells.iter_mut().zip(&s.means).zip(&s.stds) {
                    if let Some(v) = c {
                        *v = (*v - m) / sd;
                    }
                }
                y = s.apply_target(y);
            }
            Observation::new(MaskedVector::from_na_row(&cells, d)?, y)
        })
        .collect::<Result<Vec<_>>>()?;

    let masks: Vec<&MaskedVector> = observations.iter().map(|o| &o.x).collect();
    let floor = 1.0 / observations.len() as f64;
    let (miss, w) = MissingnessModel::estimate(masks, floor)?;
    warnings.extend(w);

    Ok(Ingested {
        feature_names,
        target: opts.target.clone(),
        observations,
        miss,
        scaling,
        rejected_rows: rejected,
        warnings,
    })
}

fn mean_std(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut n = 0u64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    (n > 0).then(|| (mean, (m2 / n as f64).sqrt()))
}

fn fit_scaling(
    rows: &[(Vec<Option<f64>>, f64)],
    d: usize,
    names: &[String],
    warnings: &mut Vec<Warning>,
) -> Result<Scaling> {
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
    for j in 0..d {
        let (m, s) = mean_std(rows.iter().filter_map(|(c, _)| c[j])).ok_or_else(|| {
            Error::invalid(format!(
                "column {:?} has no observed entry; cannot scale it",
                names[j]
            ))
        })?;
        means.push(m);
        if s > 0.0 && s.is_finite() {
            stds.push(s);
        } else {
            warnings.push(Warning::ConstantColumn { column: j });
            stds.push(1.0);
        }
    }
    let (target_mean, s) = mean_std(rows.iter().map(|(_, y)| *y)).expect("rows is non-empty");
    let target_std = if s > 0.0 && s.is_finite() { s } else { 1.0 };
    Ok(Scaling {
        means,
        stds,
        target_mean,
        target_std,
    })
}

/// Complete rows read for prediction, in the model's column order.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteRows {
    pub rows: Vec<Vec<f64>>,
    pub target: Option<Vec<f64>>,
}

/// Reads a test file. Every listed feature column must exist and be fully
/// observed; the target is read only if `target` is given and present.
pub fn read_complete_rows<R: Read>(
    input: R,
    feature_names: &[String],
    target: Option<&str>,
    na_tokens: &[String],
) -> Result<CompleteRows> {
    let mut rdr = reader(input);
    let names = headers(&mut rdr)?;
    let idx = feature_names
        .iter()
        .map(|f| {
            names
                .iter()
                .position(|n| n == f)
                .ok_or_else(|| Error::invalid(format!("column {f:?} missing from test data")))
        })
        .collect::<Result<Vec<_>>>()?;
    let target_idx = target.and_then(|t| names.iter().position(|n| n == t));
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let parse = |i: usize| -> Result<f64> {
            let cell = &rec[i];
            if na_tokens.iter().any(|t| t == cell) {
                return Err(Error::invalid(format!(
                    "line {line}, column {:?}: missing value in test data (test rows must be complete)",
                    names[i]
                )));
            }
            parse_cell(cell, line, &names[i])
        };
        rows.push(idx.iter().map(|&i| parse(i)).collect::<Result<Vec<_>>>()?);
        if let Some(t) = target_idx {
            ys.push(parse(t)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("empty file: no data rows"));
    }
    Ok(CompleteRows {
        rows,
        target: target_idx.map(|_| ys),
    })
}

/// Writes observations as CSV, masked cells as `na_token`.
pub fn write_observations_csv<W: Write>(
    out: W,
    feature_names: &[String],
    target_name: &str,
    observations: &[Observation],
    na_token: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.push(target_name);
    w.write_record(&header).map_err(csv_error)?;
    for o in observations {
        if o.dim() != feature_names.len() {
            return Err(Error::invalid("observation width does not match the header"));
        }
        let mut rec: Vec<String> = o
            .x
            .to_na_row()
            .into_iter()
            .map(|c| c.map(|v| v.to_string()).unwrap_or_else(|| na_token.to_string()))
            .collect();
        rec.push(o.y.to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a comma-separated probability list such as `0.9,0.7,1`.
pub fn parse_probs(s: &str) -> Result<Vec<f64>> {
    let p = s
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| Error::invalid(format!("cannot parse probability {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    MissingnessModel::supplied(p.clone())?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str, scale: bool) -> Result<Ingested> {
        ingest_reader(text.as_bytes(), &IngestOptions::new("y").scaled(scale))
    }

    #[test]
    fn na_cells_are_masked() {
        let got = ingest("a,b,y\n1.5,NA,1\n,2,0\n3,4,2\n", false).unwrap();
        assert_eq!(got.feature_names, ["a", "b"]);
        assert_eq!(got.observations.len(), 3);
        assert_eq!(got.observations[0].x.mask(), &[true, false]);
        assert_eq!(got.observations[1].x.mask(), &[false, true]);
        assert_eq!(got.miss.p(), &[2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn complete_file_has_unit_probabilities() {
        let got = ingest("y,a,b\n1,1,2\n2,3,4\n", false).unwrap();
        assert_eq!(got.miss.p(), &[1.0, 1.0]);
        assert_eq!(got.observations[1].x.values(), &[3.0, 4.0]);
        assert_eq!(got.observations[1].y, 2.0);
    }

    #[test]
    fn missing_target_rows_are_rejected() {
        let got = ingest("a,y\n1,NA\n2,3\nnull,null\n", false).unwrap();
        assert_eq!(got.rejected_rows, 2);
        assert_eq!(got.observations.len(), 1);
        assert!(ingest("a,y\n1,NA\n", false).is_err());
    }

    #[test]
    fn parse_errors_name_the_cell() {
        let err = ingest("a,y\n1,2\nfoo,3\n", false).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("column a"), "{err}");
        assert!(ingest("a,y\ninf,1\n", false).is_err());
        assert!(ingest("", false).is_err());
        assert!(ingest("a,y\n", false).is_err());
        assert!(ingest("a,b\n1,2\n", false).is_err());
        assert!(ingest("a,y\n1,2,3\n", false).is_err());
        assert!(ingest("a,a,y\n1,2,3\n", false).is_err());
    }

    #[test]
    fn scaling_uses_observed_entries() {
        let got = ingest("a,y\n1,1\nNA,2\n3,3\n", true).unwrap();
        let s = got.scaling.as_ref().unwrap();
        assert_eq!(s.means, vec![2.0]);
        assert_eq!(s.stds, vec![1.0]);
        assert_eq!(s.target_mean, 2.0);
        assert_eq!(got.observations[0].x.values(), &[-1.0]);
        assert_eq!(got.observations[1].x.values(), &[0.0]);
        assert!(!got.observations[1].x.mask()[0]);

        let constant = ingest("a,y\n5,1\n5,2\n", true).unwrap();
        assert_eq!(constant.warnings, vec![Warning::ConstantColumn { column: 0 }]);
        assert!(ingest("a,y\nNA,1\nNA,2\n", true).is_err());
    }

    #[test]
    fn sixteen_percent_missing_column() {
        let mut text = String::from("lactate,y\n");
        for i in 0..100 {
            if i % 25 < 4 {
                text.push_str("NA,1\n");
            } else {
                text.push_str("1.0,1\n");
            }
        }
        let got = ingest(&text, false).unwrap();
        assert!((got.miss.p()[0] - 0.84).abs() < 1e-12);
    }

    #[test]
    fn custom_na_tokens() {
        let opts = IngestOptions {
            na_tokens: vec!["?".into()],
            ..IngestOptions::new("y")
        };
        let got = ingest_reader("a,y\n?,1\n2,2\n".as_bytes(), &opts).unwrap();
        assert_eq!(got.observations[0].x.mask(), &[false]);
        assert!(ingest_reader("a,y\nNA,1\n".as_bytes(), &opts).is_err());
    }

    #[test]
    fn complete_rows_for_prediction() {
        let names = vec!["b".to_string(), "a".to_string()];
        let na: Vec<String> = DEFAULT_NA_TOKENS.iter().map(|s| s.to_string()).collect();
        let got = read_complete_rows("a,b,y\n1,2,3\n4,5,6\n".as_bytes(), &names, Some("y"), &na).unwrap();
        assert_eq!(got.rows, vec![vec![2.0, 1.0], vec![5.0, 4.0]]);
        assert_eq!(got.target, Some(vec![3.0, 6.0]));
        let no_target = read_complete_rows("a,b\n1,2\n".as_bytes(), &names, Some("y"), &na).unwrap();
        assert_eq!(no_target.target, None);
        assert!(read_complete_rows("a,b\n1,NA\n".as_bytes(), &names, None, &na).is_err());
        assert!(read_complete_rows("a\n1\n".as_bytes(), &names, None, &na).is_err());
    }

    #[test]
    fn write_then_ingest() {
        let obs = vec![
            Observation::new(MaskedVector::from_na_row(&[Some(0.25), None], 2).unwrap(), -1.5).unwrap(),
            Observation::new(MaskedVector::from_na_row(&[None, Some(1e-7)], 2).unwrap(), 2.0).unwrap(),
        ];
        let names = vec!["x1".to_string(), "x2".to_string()];
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, &names, "y", &obs, "NA").unwrap();
        let back = ingest_reader(buf.as_slice(), &IngestOptions::new("y")).unwrap();
        assert_eq!(back.observations, obs);
    }

    #[test]
    fn probs_flag() {
        assert_eq!(parse_probs("0.9, 0.7,1").unwrap(), vec![0.9, 0.7, 1.0]);
        assert!(parse_probs("0.9,x").is_err());
        assert!(parse_probs("0.9,0").is_err());
        assert!(parse_probs("").is_err());
    }
}
