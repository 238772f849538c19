//! Data model for incomplete observations.
//!
//! A covariate row is stored as zero-imputed values plus an observation mask,
//! never with a sentinel inside the numeric vector, so dot products never see
//! a NaN.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Non-fatal diagnostic emitted alongside a result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Warning {
    /// A column had (almost) no observed entries; its probability was clamped.
    ClampedColumn { column: usize, floor: f64 },
    /// The step size exceeds `1 / (2L)`.
    StepAboveBound { alpha: f64, bound: f64 },
    /// A row without any observed entry was ignored.
    SkippedEmptyRow { row: usize },
    /// A column with zero spread was left unscaled.
    ConstantColumn { column: usize },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::ClampedColumn { column, floor } => write!(
                f,
                "column {column}: observation probability clamped to {floor}"
            ),
            Warning::StepAboveBound { alpha, bound } => write!(
                f,
                "step size {alpha} exceeds 1/(2L) = {bound}; convergence is not guaranteed"
            ),
            Warning::SkippedEmptyRow { row } => {
                write!(f, "row {row} has no observed entry and was skipped")
            }
            Warning::ConstantColumn { column } => {
                write!(f, "column {column} has zero spread and was not scaled")
            }
        }
    }
}

/// A zero-imputed covariate row together with its observation mask.
///
/// Invariant: `values[j] == 0.0` whenever `mask[j] == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedVector {
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl MaskedVector {
    /// Applies `mask` to `raw`, zeroing the unobserved slots.
    pub fn new(raw: &[f64], mask: Vec<bool>) -> Result<Self> {
        if raw.len() != mask.len() {
            return Err(Error::invalid(format!(
                "values and mask lengths differ ({} vs {})",
                raw.len(),
                mask.len()
            )));
        }
        let values = raw
            .iter()
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect::<Vec<_>>();
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite observed value at {j}")));
        }
        Ok(MaskedVector { values, mask })
    }

    /// A fully observed row.
    pub fn complete(values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::new(&values, mask)
    }

    /// Builds a row from raw cells, `None` standing for NA.
    pub fn from_na_row(raw: &[Option<f64>], d: usize) -> Result<Self> {
        if raw.len() != d {
            return Err(Error::invalid(format!(
                "row has {} cells, expected {d}",
                raw.len()
            )));
        }
        let mut values = Vec::with_capacity(d);
        let mut mask = Vec::with_capacity(d);
        for (j, cell) in raw.iter().enumerate() {
            match cell {
                Some(v) if !v.is_finite() => {
                    return Err(Error::invalid(format!(
                        "non-finite observed value at {j}"
                    )))
                }
                Some(v) => {
                    values.push(*v);
                    mask.push(true);
                }
                None => {
                    values.push(0.0);
                    mask.push(false);
                }
            }
        }
        Ok(MaskedVector { values, mask })
    }

    /// Reinserts NA at unobserved slots.
    pub fn to_na_row(&self) -> Vec<Option<f64>> {
        self.values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &m)| m.then_some(v))
            .collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// One incomplete covariate row and its (always observed) response.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub x: MaskedVector,
    pub y: f64,
}

impl Observation {
    pub fn new(x: MaskedVector, y: f64) -> Result<Self> {
        if !y.is_finite() {
            return Err(Error::invalid("non-finite response"));
        }
        Ok(Observation { x, y })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Supplied,
    Estimated,
}

/// Per-feature observation probabilities `p_j` (feature `j` is observed with
/// probability `p_j`, independently across features and rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMissingness", into = "RawMissingness")]
pub struct MissingnessModel {
    p: Vec<f64>,
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct RawMissingness {
    p: Vec<f64>,
    provenance: Provenance,
}

impl From<MissingnessModel> for RawMissingness {
    fn from(m: MissingnessModel) -> Self {
        RawMissingness {
            p: m.p,
            provenance: m.provenance,
        }
    }
}

impl TryFrom<RawMissingness> for MissingnessModel {
    type Error = Error;

    fn try_from(raw: RawMissingness) -> Result<Self> {
        MissingnessModel::new(raw.p, raw.provenance)
    }
}

impl MissingnessModel {
    pub fn new(p: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::invalid("missingness model needs at least one feature"));
        }
        if let Some((j, v)) = p
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > 0.0 && v <= 1.0))
        {
            return Err(Error::invalid(format!(
                "observation probability p[{j}] = {v} is outside (0, 1]"
            )));
        }
        Ok(MissingnessModel { p, provenance })
    }

    pub fn supplied(p: Vec<f64>) -> Result<Self> {
        Self::new(p, Provenance::Supplied)
    }

    pub fn homogeneous(d: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; d], Provenance::Supplied)
    }

    /// Every feature always observed.
    pub fn complete(d: usize) -> Self {
        MissingnessModel {
            p: vec![1.0; d],
            provenance: Provenance::Supplied,
        }
    }

    /// Empirical observation frequencies, clamped below at `clamp_floor`.
    ///
    /// Columns that hit the floor are reported as warnings.
    pub fn estimate<'a, I>(rows: I, clamp_floor: f64) -> Result<(Self, Vec<Warning>)>
    where
        I: IntoIterator<Item = &'a MaskedVector>,
    {
        if !(clamp_floor > 0.0 && clamp_floor <= 1.0) {
            return Err(Error::invalid(format!(
                "clamp floor {clamp_floor} is outside (0, 1]"
            )));
        }
        let mut counts: Vec<u64> = Vec::new();
        let mut n = 0u64;
        for row in rows {
            if n == 0 {
                counts = vec![0; row.len()];
            } else if row.len() != counts.len() {
                return Err(Error::invalid(format!(
                    "row {n} has {} features, expected {}",
                    row.len(),
                    counts.len()
                )));
            }
            for (c, &m) in counts.iter_mut().zip(row.mask()) {
                *c += u64::from(m);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("cannot estimate missingness from zero rows"));
        }
        if counts.is_empty() {
            return Err(Error::invalid("rows have no features"));
        }
        let mut warnings = Vec::new();
        let p = counts
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let freq = c as f64 / n as f64;
                if freq < clamp_floor {
                    warnings.push(Warning::ClampedColumn {
                        column: j,
                        floor: clamp_floor,
                    });
                    clamp_floor
                } else {
                    freq
                }
            })
            .collect();
        Ok((
            MissingnessModel {
                p,
                provenance: Provenance::Estimated,
            },
            warnings,
        ))
    }

    /// [`Self::estimate`] with the default floor `1/n`.
    pub fn estimate_default(rows: &[MaskedVector]) -> Result<(Self, Vec<Warning>)> {
        let floor = 1.0 / rows.len().max(1) as f64;
        Self::estimate(rows, floor)
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    /// `p_m = min_j p_j`.
    pub fn p_min(&self) -> f64 {
        self.p.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean_p(&self) -> f64 {
        self.p.iter().sum::<f64>() / self.p.len() as f64
    }

    pub fn is_homogeneous(&self) -> bool {
        self.p.windows(2).all(|w| w[0] == w[1])
    }
}

/// Step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    Constant(f64),
    /// `alpha_k = 1 / sqrt(k + 1)` at iteration `k >= 1`.
    InverseSqrt,
}

impl StepPolicy {
    pub fn constant(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid(format!("step size {alpha} must be positive")));
        }
        Ok(StepPolicy::Constant(alpha))
    }

    pub fn at(&self, k: u64) -> f64 {
        match *self {
            StepPolicy::Constant(alpha) => alpha,
            StepPolicy::InverseSqrt => 1.0 / ((k + 1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub lambda: f64,
}

impl RegularizerConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "ridge weight {lambda} must be finite and nonnegative"
            )));
        }
        Ok(RegularizerConfig { lambda })
    }
}

/// Iterate, running average and counter of an SGD run.
///
/// After `k` updates, `beta_avg` is the mean of `beta_0, ..., beta_k`,
/// `beta_0` included.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub beta: Vec<f64>,
    pub beta_avg: Vec<f64>,
    pub k: u64,
    pub step: StepPolicy,
}

impl OptimizerState {
    /// `beta_0 = 0`.
    pub fn new(d: usize, step: StepPolicy) -> Self {
        OptimizerState {
            beta: vec![0.0; d],
            beta_avg: vec![0.0; d],
            k: 0,
            step,
        }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// `beta_k = beta_{k-1} - alpha_k * direction`, then folds `beta_k` into
    /// the running average.
    pub fn apply(&mut self, direction: &[f64]) -> Result<()> {
        debug_assert_eq!(direction.len(), self.beta.len());
        self.k += 1;
        let alpha = self.step.at(self.k);
        let k = self.k as f64;
        let keep = k / (k + 1.0);
        let add = 1.0 / (k + 1.0);
        for ((b, avg), g) in self.beta.iter_mut().zip(&mut self.beta_avg).zip(direction) {
            *b -= alpha * g;
            *avg = keep * *avg + add * *b;
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Divergence { iteration: self.k });
        }
        Ok(())
    }
}
