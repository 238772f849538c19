//! Risk probes and reference minimizers.
//!
//! `f_i(beta) = (<X_i, beta> - y_i)^2 / 2` and `R_n` is its sample mean.
//! Probes need complete covariates, so they only exist for synthetic data or
//! complete test sets; the optimizer receives them as opaque callbacks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Anything that can score an iterate by its excess risk.
pub trait ExcessRisk {
    fn excess_risk(&self, beta: &[f64]) -> f64;
}

fn check_shapes(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() != beta.len() {
        return Err(Error::invalid(format!(
            "{} columns but beta has length {}",
            x.ncols(),
            beta.len()
        )));
    }
    Ok(())
}

/// `R_n(beta) = (1/n) sum_i (<X_i, beta> - y_i)^2 / 2`.
pub fn empirical_risk(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> Result<f64> {
    check_shapes(x, y, beta)?;
    if y.is_empty() {
        return Err(Error::invalid("empirical risk of zero rows"));
    }
    let b = DVector::from_column_slice(beta);
    let resid = x * b - DVector::from_column_slice(y);
    Ok(0.5 * resid.norm_squared() / y.len() as f64)
}

/// Exact minimizer of `R_n(beta) + lambda ||beta||^2`, i.e. the solution of
/// `(X^T X + 2 lambda n I) beta = X^T y`.
pub fn ols_reference(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("ridge weight {lambda} must be >= 0")));
    }
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} responses",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::invalid("cannot solve least squares with zero rows"));
    }
    let n = y.len() as f64;
    let d = x.ncols();
    let mut gram = x.transpose() * x;
    for j in 0..d {
        gram[(j, j)] += 2.0 * lambda * n;
    }
    let rhs = x.transpose() * DVector::from_column_slice(y);
    let scale = gram.diagonal().max().max(f64::MIN_POSITIVE);
    let singular = || {
        Error::Singular(if lambda == 0.0 {
            "design is rank deficient; use a positive ridge weight".to_string()
        } else {
            "regularized normal equations are not positive definite".to_string()
        })
    };
    let chol = gram.clone().cholesky().ok_or_else(singular)?;
    let pivot_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
    if pivot_min <= 1e-12 * scale {
        return Err(singular());
    }
    let sol = chol.solve(&rhs);
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite least-squares solution".into()));
    }
    Ok(sol.iter().copied().collect())
}

/// Empirical excess risk against the exact (ridge) minimizer of the same data.
#[derive(Debug, Clone)]
pub struct RiskProbe {
    x: DMatrix<f64>,
    y: Vec<f64>,
    lambda: f64,
    reference_beta: Vec<f64>,
    reference_risk: f64,
}

impl RiskProbe {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, lambda: f64) -> Result<Self> {
        let reference_beta = ols_reference(&x, &y, lambda)?;
        let reference_risk = objective(&x, &y, lambda, &reference_beta)?;
        Ok(RiskProbe {
            x,
            y,
            lambda,
            reference_beta,
            reference_risk,
        })
    }

    pub fn reference_beta(&self) -> &[f64] {
        &self.reference_beta
    }

    pub fn reference_risk(&self) -> f64 {
        self.reference_risk
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    /// Norm of the objective's gradient at the reference solution.
    pub fn reference_gradient_norm(&self) -> f64 {
        let b = DVector::from_column_slice(&self.reference_beta);
        let resid = &self.x * &b - DVector::from_column_slice(&self.y);
        let g = self.x.transpose() * resid / self.y.len() as f64 + 2.0 * self.lambda * b;
        g.norm()
    }
}

fn objective(x: &DMatrix<f64>, y: &[f64], lambda: f64, beta: &[f64]) -> Result<f64> {
    let penalty: f64 = beta.iter().map(|b| b * b).sum();
    Ok(empirical_risk(x, y, beta)? + lambda * penalty)
}

impl ExcessRisk for RiskProbe {
    fn excess_risk(&self, beta: &[f64]) -> f64 {
        objective(&self.x, &self.y, self.lambda, beta)
            .map(|r| r - self.reference_risk)
            .unwrap_or(f64::NAN)
    }
}

/// Population excess risk `(beta - beta_ref)^T H (beta - beta_ref) / 2`, with
/// `H = E[x x^T]` known exactly (synthetic data).
///
/// For a well-specified linear model with centered noise this is
/// `R(beta) - R(beta*)`.
#[derive(Debug, Clone)]
pub struct PopulationProbe {
    h: DMatrix<f64>,
    beta_ref: Vec<f64>,
}

impl PopulationProbe {
    pub fn new(h: DMatrix<f64>, beta_ref: Vec<f64>) -> Result<Self> {
        if h.nrows() != h.ncols() || h.nrows() != beta_ref.len() {
            return Err(Error::invalid("second-moment matrix and reference disagree in size"));
        }
        Ok(PopulationProbe { h, beta_ref })
    }

    pub fn reference_beta(&self) -> &[f64] {
        &self.beta_ref
    }
}

impl ExcessRisk for PopulationProbe {
    fn excess_risk(&self, beta: &[f64]) -> f64 {
        let e = DVector::from_iterator(
            beta.len(),
            beta.iter().zip(&self.beta_ref).map(|(a, b)| a - b),
        );
        0.5 * e.dot(&(&self.h * &e))
    }
}

/// `||y_hat - y||^2 / ||y||^2`.
pub fn relative_prediction_error(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} responses",
            y_hat.len(),
            y.len()
        )));
    }
    let denom: f64 = y.iter().map(|v| v * v).sum();
    if !(denom > 0.0) {
        return Err(Error::invalid("relative error undefined for a zero response vector"));
    }
    let num: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num / denom)
}
