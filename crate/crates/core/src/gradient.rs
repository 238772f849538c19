//! Debiased stochastic gradients for zero-imputed rows.
//!
//! With `P = diag(p)` and `x` the zero-imputed row, the debiased gradient is
//!
//! ```text
//! g(beta) = P^-1 x (x^T P^-1 beta - y) - (I - P) P^-2 diag(x x^T) beta
//! ```
//!
//! Its expectation over the Bernoulli mask equals the complete-data gradient
//! `x (x^T beta - y)`. The correction is computed coordinatewise; no `d x d`
//! matrix is formed. For degree-2 polynomial features the features are no
//! longer independently observed and the correction is elementwise through the
//! co-observation matrix `U` (see [`crate::polyfeat`]).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedVector, MissingnessModel};
use crate::error::{Error, Result};
use crate::polyfeat::FeatureMap;

/// Which stochastic direction an optimizer follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum GradientKind {
    /// The debiased gradient.
    PlainDebiased,
    /// The debiased gradient plus `2 * lambda * beta`.
    RidgeDebiased { lambda: f64 },
    /// Elementwise debiasing of degree-2 features expanded with `map`; the
    /// missingness model handed to the optimizer is over the raw features.
    PolyDebiased { map: FeatureMap, lambda: f64 },
    /// The ordinary least-squares gradient, no debiasing. Used by the
    /// naive-imputation and complete-case baselines.
    LeastSquares { lambda: f64 },
}

impl GradientKind {
    pub fn lambda(&self) -> f64 {
        match self {
            GradientKind::PlainDebiased => 0.0,
            GradientKind::RidgeDebiased { lambda }
            | GradientKind::PolyDebiased { lambda, .. }
            | GradientKind::LeastSquares { lambda } => *lambda,
        }
    }
}

fn check_dims(x: &MaskedVector, beta: &[f64], p: &[f64]) -> Result<()> {
    if x.len() != beta.len() || x.len() != p.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: row {}, beta {}, p {}",
            x.len(),
            beta.len(),
            p.len()
        )));
    }
    Ok(())
}

fn check_finite(g: &[f64]) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical("non-finite gradient".into()))
    }
}

/// Writes the debiased gradient into `out`. No validation.
#[inline]
fn debiased_into(x: &[f64], y: f64, beta: &[f64], p: &[f64], out: &mut [f64]) {
    let mut fit = 0.0;
    for ((xv, b), pv) in x.iter().zip(beta).zip(p) {
        fit += xv / pv * b;
    }
    let resid = fit - y;
    for j in 0..x.len() {
        let pj = p[j];
        let xj = x[j];
        out[j] = xj / pj * resid - (1.0 - pj) / (pj * pj) * (xj * xj) * beta[j];
    }
}

/// Debiased gradient of the squared loss at `beta` for one zero-imputed row.
pub fn debiased_gradient(
    x: &MaskedVector,
    y: f64,
    beta: &[f64],
    miss: &MissingnessModel,
) -> Result<Vec<f64>> {
    check_dims(x, beta, miss.p())?;
    let mut out = vec![0.0; x.len()];
    debiased_into(x.values(), y, beta, miss.p(), &mut out);
    check_finite(&out)?;
    Ok(out)
}

/// [`debiased_gradient`] plus the ridge term `2 * lambda * beta`; the debiasing
/// itself is unchanged because the penalty does not involve the data.
pub fn debiased_gradient_ridge(
    x: &MaskedVector,
    y: f64,
    beta: &[f64],
    miss: &MissingnessModel,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge weight {lambda} must be >= 0")));
    }
    let mut g = debiased_gradient(x, y, beta, miss)?;
    for (gj, bj) in g.iter_mut().zip(beta) {
        *gj += 2.0 * lambda * bj;
    }
    check_finite(&g)?;
    Ok(g)
}

fn check_prob_matrix(u: &DMatrix<f64>, d: usize) -> Result<()> {
    if u.nrows() != d || u.ncols() != d {
        return Err(Error::invalid(format!(
            "probability matrix is {}x{}, expected {d}x{d}",
            u.nrows(),
            u.ncols()
        )));
    }
    if u.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::invalid("probability matrix entries must lie in (0, 1]"));
    }
    Ok(())
}

/// Polynomial-feature direction: coordinate `a` is
/// `sum_b x_a x_b beta_b / U[a,b] - x_a y / U[a,a]`.
pub fn debiased_direction_poly(
    x_exp: &MaskedVector,
    y: f64,
    beta: &[f64],
    u: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    let d = x_exp.len();
    if beta.len() != d {
        return Err(Error::invalid(format!(
            "dimension mismatch: row {d}, beta {}",
            beta.len()
        )));
    }
    check_prob_matrix(u, d)?;
    let inv = u.map(|v| 1.0 / v);
    let mut out = vec![0.0; d];
    poly_into(x_exp, y, beta, &inv, 0.0, &mut out);
    check_finite(&out)?;
    Ok(out)
}

fn poly_into(
    x: &MaskedVector,
    y: f64,
    beta: &[f64],
    inv_u: &DMatrix<f64>,
    lambda: f64,
    out: &mut [f64],
) {
    let values = x.values();
    // Unobserved expanded entries are exactly zero; skip them.
    let observed: Vec<usize> = (0..values.len()).filter(|&j| x.mask()[j]).collect();
    for (a, o) in out.iter_mut().enumerate() {
        *o = 2.0 * lambda * beta[a];
    }
    for &a in &observed {
        let xa = values[a];
        let mut acc = 0.0;
        for &b in &observed {
            acc += values[b] * inv_u[(a, b)] * beta[b];
        }
        out[a] += xa * acc - xa * inv_u[(a, a)] * y;
    }
}

/// Ordinary least-squares gradient `x (x^T beta - y) + 2 lambda beta`.
pub fn least_squares_gradient(x: &[f64], y: f64, beta: &[f64], lambda: f64) -> Vec<f64> {
    let resid = x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() - y;
    x.iter()
        .zip(beta)
        .map(|(xj, bj)| xj * resid + 2.0 * lambda * bj)
        .collect()
}

/// A [`GradientKind`] bound to its missingness model, ready for repeated
/// evaluation in an SGD loop.
#[derive(Debug, Clone)]
pub struct PreparedGradient {
    inner: Prepared,
    dim: usize,
}

#[derive(Debug, Clone)]
enum Prepared {
    Debiased { p: Vec<f64>, lambda: f64 },
    Poly { inv_u: DMatrix<f64>, lambda: f64 },
    LeastSquares { lambda: f64 },
}

impl PreparedGradient {
    /// `miss` is over the raw features; for [`GradientKind::PolyDebiased`]
    /// the expanded dimension is taken from the feature map.
    pub fn new(kind: &GradientKind, miss: &MissingnessModel) -> Result<Self> {
        let lambda = kind.lambda();
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("ridge weight {lambda} must be >= 0")));
        }
        let (inner, dim) = match kind {
            GradientKind::PlainDebiased | GradientKind::RidgeDebiased { .. } => (
                Prepared::Debiased {
                    p: miss.p().to_vec(),
                    lambda,
                },
                miss.dim(),
            ),
            GradientKind::PolyDebiased { map, .. } => {
                if map.d_raw() != miss.dim() {
                    return Err(Error::invalid(format!(
                        "feature map expects {} raw features, missingness model has {}",
                        map.d_raw(),
                        miss.dim()
                    )));
                }
                let u = map.probability_matrix(miss)?;
                (
                    Prepared::Poly {
                        inv_u: u.map(|v| 1.0 / v),
                        lambda,
                    },
                    map.d_exp(),
                )
            }
            GradientKind::LeastSquares { .. } => {
                (Prepared::LeastSquares { lambda }, miss.dim())
            }
        };
        Ok(PreparedGradient { inner, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the direction at `beta` into `out`.
    pub fn eval_into(&self, x: &MaskedVector, y: f64, beta: &[f64], out: &mut [f64]) {
        match &self.inner {
            Prepared::Debiased { p, lambda } => {
                debiased_into(x.values(), y, beta, p, out);
                if *lambda != 0.0 {
                    for (o, b) in out.iter_mut().zip(beta) {
                        *o += 2.0 * lambda * b;
                    }
                }
            }
            Prepared::Poly { inv_u, lambda } => poly_into(x, y, beta, inv_u, *lambda, out),
            Prepared::LeastSquares { lambda } => {
                let xv = x.values();
                let resid = xv.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>() - y;
                for ((o, xj), bj) in out.iter_mut().zip(xv).zip(beta) {
                    *o = xj * resid;
                    if *lambda != 0.0 {
                        *o += 2.0 * lambda * bj;
                    }
                }
            }
        }
    }
}
