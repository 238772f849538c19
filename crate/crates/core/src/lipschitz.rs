//! Lipschitz constant of the debiased gradient and the step size it implies.
//!
//! For a fixed row and mask the debiased gradient is `L`-Lipschitz in `beta`
//! with `L <= ||x||^2 / p_m^2`. Two estimates are offered:
//!
//! * oracle, from complete rows: `max_k ||X_k||^2 / p_m^2`;
//! * from incomplete rows: `max_k (||x_k||^2 d / #observed_k) / p̂_m^2`, with
//!   `p̂` the observed frequencies of the same rows.
//!
//! The suggested step is `1 / (2L)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedVector, MissingnessModel, Warning};
use crate::error::{Error, Result};
use crate::polyfeat::FeatureMap;

/// Rows used by the streaming warm-up when no explicit prefix is given.
pub const DEFAULT_WARM_UP: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzMethod {
    Oracle,
    FromNa,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub method: LipschitzMethod,
    pub suggested_alpha: f64,
}

impl LipschitzEstimate {
    pub fn new(value: f64, method: LipschitzMethod) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::Numerical(format!(
                "Lipschitz estimate {value} is not a positive finite number"
            )));
        }
        Ok(LipschitzEstimate {
            value,
            method,
            suggested_alpha: 0.5 / value,
        })
    }
}

/// Oracle estimate from complete rows (`n x d`).
pub fn lipschitz_oracle(rows: &DMatrix<f64>, miss: &MissingnessModel) -> Result<LipschitzEstimate> {
    if rows.nrows() == 0 || rows.ncols() == 0 {
        return Err(Error::invalid("cannot estimate L from an empty matrix"));
    }
    if rows.ncols() != miss.dim() {
        return Err(Error::invalid(format!(
            "matrix has {} columns, missingness model {}",
            rows.ncols(),
            miss.dim()
        )));
    }
    let pm = miss.p_min();
    LipschitzEstimate::new(max_row_sq_norm(rows) / (pm * pm), LipschitzMethod::Oracle)
}

pub(crate) fn max_row_sq_norm(rows: &DMatrix<f64>) -> f64 {
    rows.row_iter()
        .map(|r| r.norm_squared())
        .fold(0.0, f64::max)
}

/// Estimate from incomplete rows alone.
///
/// Returns the estimate, the `p̂` it used (floor `1/n`), and warnings for
/// skipped all-missing rows or clamped columns.
pub fn lipschitz_from_na(
    rows: &[MaskedVector],
) -> Result<(LipschitzEstimate, MissingnessModel, Vec<Warning>)> {
    let mut tracker = LipschitzTracker::default();
    for row in rows {
        tracker.observe(row)?;
    }
    tracker.from_na()
}

/// Oracle estimate for the polynomial direction: `max ||phi(X_k)||^2 / min U`.
///
/// Each entry of the direction's Jacobian is `x_a x_b / U[a,b]`, whose
/// Frobenius norm is at most `||x||^2 / min U`.
pub fn lipschitz_oracle_poly(
    rows: &DMatrix<f64>,
    map: &FeatureMap,
    miss: &MissingnessModel,
) -> Result<LipschitzEstimate> {
    if rows.nrows() == 0 {
        return Err(Error::invalid("cannot estimate L from an empty matrix"));
    }
    let u = map.probability_matrix(miss)?;
    let u_min = u.min();
    let mut best = 0.0f64;
    for r in rows.row_iter() {
        let raw: Vec<f64> = r.iter().copied().collect();
        let e = map.expand_complete(&raw)?;
        best = best.max(e.iter().map(|v| v * v).sum());
    }
    LipschitzEstimate::new(best / u_min, LipschitzMethod::Oracle)
}

/// Incomplete-data estimate for the polynomial direction: expanded rows are
/// upweighted by `d_exp / #observed expanded`, `U` is built from `p̂`.
pub fn lipschitz_from_na_poly(
    raw_rows: &[MaskedVector],
    map: &FeatureMap,
) -> Result<(LipschitzEstimate, MissingnessModel, Vec<Warning>)> {
    if raw_rows.is_empty() {
        return Err(Error::invalid("cannot estimate L from zero rows"));
    }
    let (p_hat, mut warnings) = MissingnessModel::estimate_default(raw_rows)?;
    let u = map.probability_matrix(&p_hat)?;
    let d_exp = map.d_exp() as f64;
    let mut best = 0.0f64;
    let mut used = 0usize;
    for (i, row) in raw_rows.iter().enumerate() {
        let e = map.expand_row(row)?;
        let obs = e.observed_count();
        if obs == 0 {
            warnings.push(Warning::SkippedEmptyRow { row: i });
            continue;
        }
        used += 1;
        best = best.max(e.squared_norm() * d_exp / obs as f64);
    }
    if used == 0 {
        return Err(Error::invalid("every row is entirely missing"));
    }
    let est = LipschitzEstimate::new(best / u.min(), LipschitzMethod::FromNa)?;
    Ok((est, p_hat, warnings))
}

/// Running version of both estimators, for a streaming warm-up prefix.
#[derive(Debug, Clone, Default)]
pub struct LipschitzTracker {
    n: usize,
    counts: Vec<u64>,
    max_adjusted: f64,
    max_complete: f64,
    skipped: Vec<usize>,
}

impl LipschitzTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows_seen(&self) -> usize {
        self.n
    }

    /// Feeds one incomplete row.
    pub fn observe(&mut self, row: &MaskedVector) -> Result<()> {
        if self.n == 0 {
            self.counts = vec![0; row.len()];
        } else if row.len() != self.counts.len() {
            return Err(Error::invalid(format!(
                "row {} has {} features, expected {}",
                self.n,
                row.len(),
                self.counts.len()
            )));
        }
        for (c, &m) in self.counts.iter_mut().zip(row.mask()) {
            *c += u64::from(m);
        }
        let obs = row.observed_count();
        if obs == 0 {
            self.skipped.push(self.n);
        } else {
            let sq = row.squared_norm();
            self.max_adjusted = self
                .max_adjusted
                .max(sq * row.len() as f64 / obs as f64);
            if obs == row.len() {
                self.max_complete = self.max_complete.max(sq);
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Largest squared norm among the fully observed rows seen so far.
    pub fn max_complete_sq_norm(&self) -> f64 {
        self.max_complete
    }

    pub fn from_na(&self) -> Result<(LipschitzEstimate, MissingnessModel, Vec<Warning>)> {
        if self.n == 0 || self.counts.is_empty() {
            return Err(Error::invalid("cannot estimate L from zero rows"));
        }
        if self.skipped.len() == self.n {
            return Err(Error::invalid("every row is entirely missing"));
        }
        let floor = 1.0 / self.n as f64;
        let mut warnings: Vec<Warning> = self
            .skipped
            .iter()
            .map(|&row| Warning::SkippedEmptyRow { row })
            .collect();
        let p: Vec<f64> = self
            .counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let f = c as f64 / self.n as f64;
                if f < floor {
                    warnings.push(Warning::ClampedColumn { column: j, floor });
                    floor
                } else {
                    f
                }
            })
            .collect();
        let p_hat = MissingnessModel::new(p, crate::data::Provenance::Estimated)?;
        let pm = p_hat.p_min();
        let est = LipschitzEstimate::new(self.max_adjusted / (pm * pm), LipschitzMethod::FromNa)?;
        Ok((est, p_hat, warnings))
    }
}
