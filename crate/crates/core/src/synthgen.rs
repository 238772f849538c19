//! Synthetic Gaussian regression data with Bernoulli masks, and the
//! theoretical excess-risk bound of averaged SGD with debiased gradients.
//!
//! Covariates are `N(0, Sigma)` with `Sigma = Q diag(1, 1/2, ..., 1/d) Q^T`
//! and `Q` a seeded random orthogonal matrix (Gaussian QR, positive diagonal
//! of `R`). Responses follow `y = x^T beta* + eps` (or `phi(x)^T beta*` for the
//! degree-2 design), `eps ~ N(0, noise_std^2)`. Each feature `j` is observed
//! independently with probability `p_j`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedVector, MissingnessModel, Observation};
use crate::error::{Error, Result};
use crate::polyfeat::FeatureMap;
use crate::risk::{PopulationProbe, RiskProbe};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    #[default]
    Linear,
    /// `y` depends on the degree-2 expansion of `x`.
    Degree2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub d: usize,
    pub n: usize,
    /// `None`: all-ones scaled to unit norm (linear), or unit weight spread
    /// over the interactions and squares (degree 2).
    pub beta_star: Option<Vec<f64>>,
    pub noise_std: f64,
    pub p: Vec<f64>,
    pub seed: u64,
    pub design: Design,
}

impl SynthConfig {
    pub fn new(d: usize, n: usize, p: Vec<f64>, seed: u64) -> Self {
        SynthConfig {
            d,
            n,
            beta_star: None,
            noise_std: 1.0,
            p,
            seed,
            design: Design::Linear,
        }
    }

    pub fn homogeneous(d: usize, n: usize, p: f64, seed: u64) -> Self {
        Self::new(d, n, vec![p; d], seed)
    }

    fn feature_map(&self) -> Result<Option<FeatureMap>> {
        match self.design {
            Design::Linear => Ok(None),
            Design::Degree2 => FeatureMap::degree2(self.d).map(Some),
        }
    }

    /// The generating parameter (over expanded features for degree 2).
    pub fn resolved_beta_star(&self) -> Result<Vec<f64>> {
        let dim = match self.feature_map()? {
            Some(fm) => fm.d_exp(),
            None => self.d,
        };
        match &self.beta_star {
            Some(b) if b.len() == dim => Ok(b.clone()),
            Some(b) => Err(Error::invalid(format!(
                "beta_star has length {}, expected {dim}",
                b.len()
            ))),
            None => Ok(match self.design {
                Design::Linear => vec![1.0 / (self.d as f64).sqrt(); self.d],
                Design::Degree2 => {
                    let k = dim - self.d;
                    let w = 1.0 / (k as f64).sqrt();
                    (0..dim).map(|f| if f < self.d { 0.0 } else { w }).collect()
                }
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::invalid("d and n must be positive"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and nonnegative"));
        }
        if self.p.len() != self.d {
            return Err(Error::invalid(format!(
                "{} probabilities for {} features",
                self.p.len(),
                self.d
            )));
        }
        MissingnessModel::supplied(self.p.clone())?;
        Ok(())
    }
}

/// A generated dataset: complete data for probes, masked rows for training.
#[derive(Debug, Clone)]
pub struct SynthData {
    /// Complete raw covariates, `n x d`.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// Masked raw rows.
    pub observations: Vec<Observation>,
    pub miss: MissingnessModel,
    pub sigma: DMatrix<f64>,
    pub beta_star: Vec<f64>,
    pub feature_map: Option<FeatureMap>,
}

impl SynthData {
    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Complete covariates in model space (expanded for degree 2).
    pub fn model_design(&self) -> Result<DMatrix<f64>> {
        match &self.feature_map {
            None => Ok(self.x.clone()),
            Some(fm) => {
                let rows = self
                    .x
                    .row_iter()
                    .map(|r| fm.expand_complete(&r.iter().copied().collect::<Vec<_>>()))
                    .collect::<Result<Vec<_>>>()?;
                Ok(DMatrix::from_row_iterator(
                    rows.len(),
                    fm.d_exp(),
                    rows.into_iter().flatten(),
                ))
            }
        }
    }

    /// Masked rows in model space (expanded for degree 2).
    pub fn model_observations(&self) -> Result<Vec<Observation>> {
        match &self.feature_map {
            None => Ok(self.observations.clone()),
            Some(fm) => self
                .observations
                .iter()
                .map(|o| Observation::new(fm.expand_row(&o.x)?, o.y))
                .collect(),
        }
    }

    /// The complete rows as fully observed observations.
    pub fn complete_observations(&self) -> Result<Vec<Observation>> {
        let x = self.model_design()?;
        x.row_iter()
            .zip(&self.y)
            .map(|(r, &y)| Observation::new(MaskedVector::complete(r.iter().copied().collect())?, y))
            .collect()
    }

    /// `R(beta) - R(beta*)` computed from the known second moments.
    pub fn population_probe(&self) -> Result<PopulationProbe> {
        let h = match &self.feature_map {
            None => self.sigma.clone(),
            Some(fm) => fm.gaussian_second_moment(&self.sigma)?,
        };
        PopulationProbe::new(h, self.beta_star.clone())
    }

    /// Empirical excess risk against the exact minimizer on the complete data.
    pub fn empirical_probe(&self, lambda: f64) -> Result<RiskProbe> {
        RiskProbe::new(self.model_design()?, self.y.clone(), lambda)
    }

    /// Largest row norm of the complete raw covariates.
    pub fn max_row_norm(&self) -> f64 {
        self.x
            .row_iter()
            .map(|r| r.norm())
            .fold(0.0, f64::max)
    }

    /// Writes `x1..xd,y` with `na_token` at masked cells.
    pub fn write_csv<W: Write>(&self, out: W, na_token: &str) -> Result<()> {
        let names: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).collect();
        crate::ingest::write_observations_csv(out, &names, "y", &self.observations, na_token)
    }
}

/// Uniformly distributed orthogonal matrix: QR of a Gaussian matrix with
/// columns of `Q` flipped so that `R` has a positive diagonal.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Independent per-replication seed.
pub fn derive_seed(seed: u64, replication: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication.wrapping_add(1));
    rng.next_u64()
}

/// `d` probabilities drawn uniformly from `[low, high]`.
pub fn draw_probabilities(d: usize, low: f64, high: f64, seed: u64) -> Result<Vec<f64>> {
    if !(low > 0.0 && low <= high && high <= 1.0) {
        return Err(Error::invalid(format!(
            "probability range [{low}, {high}] must lie in (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    Ok((0..d)
        .map(|_| {
            if low == high {
                low
            } else {
                rng.random_range(low..=high)
            }
        })
        .collect())
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let d = cfg.d;
    let n = cfg.n;
    let fm = cfg.feature_map()?;
    let beta_star = cfg.resolved_beta_star()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let q = random_orthogonal(d, &mut rng);
    let sqrt_eig: Vec<f64> = (1..=d).map(|k| (1.0 / k as f64).sqrt()).collect();
    // Columns of `a` are sqrt(lambda_k) q_k, so Sigma = a a^T.
    let mut a = q.clone();
    for (k, s) in sqrt_eig.iter().enumerate() {
        a.column_mut(k).scale_mut(*s);
    }
    let sigma = &a * a.transpose();

    let mut x = DMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut observations = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    let mut row = vec![0.0; d];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = rng.sample(StandardNormal);
        }
        for (j, r) in row.iter_mut().enumerate() {
            *r = (0..d).map(|k| a[(j, k)] * z[k]).sum();
            x[(i, j)] = *r;
        }
        let signal: f64 = match &fm {
            None => row.iter().zip(&beta_star).map(|(u, v)| u * v).sum(),
            Some(fm) => fm
                .expand_complete(&row)?
                .iter()
                .zip(&beta_star)
                .map(|(u, v)| u * v)
                .sum(),
        };
        let eps: f64 = rng.sample(StandardNormal);
        let yi = signal + cfg.noise_std * eps;
        y.push(yi);
        let mask: Vec<bool> = cfg.p.iter().map(|&pj| rng.random::<f64>() < pj).collect();
        observations.push(Observation::new(MaskedVector::new(&row, mask)?, yi)?);
    }

    Ok(SynthData {
        x,
        y,
        observations,
        miss: MissingnessModel::supplied(cfg.p.clone())?,
        sigma,
        beta_star,
        feature_map: fm,
    })
}

/// Constants entering the excess-risk bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Bound on `||x||` (the realized max row norm for Gaussian data).
    pub gamma: f64,
    pub p_m: f64,
    pub noise_var: f64,
    pub beta_star_norm: f64,
    pub d: usize,
    pub alpha: f64,
    pub lipschitz: f64,
    /// `||beta_0 - beta*||`.
    pub init_dist: f64,
}

/// `c(beta*) = Var(eps)/p_m^2 + (2 + 5 p_m)(1 - p_m)/p_m^3 * gamma^2 ||beta*||^2`.
pub fn variance_constant(inputs: &BoundInputs) -> f64 {
    let pm = inputs.p_m;
    inputs.noise_var / (pm * pm)
        + (2.0 + 5.0 * pm) * (1.0 - pm) / (pm * pm * pm)
            * inputs.gamma.powi(2)
            * inputs.beta_star_norm.powi(2)
}

/// Upper bound on `E[R(beta_avg_k)] - R(beta*)`:
/// `(1/2k) (sqrt(c d) / (1 - sqrt(alpha L)) + ||beta_0 - beta*|| / sqrt(alpha))^2`.
pub fn excess_risk_bound(inputs: &BoundInputs, k: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("the bound is stated for k >= 1"));
    }
    if !(inputs.p_m > 0.0 && inputs.p_m <= 1.0) {
        return Err(Error::invalid("p_m must lie in (0, 1]"));
    }
    if !(inputs.alpha > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let al = inputs.alpha * inputs.lipschitz;
    if !(al < 1.0) {
        return Err(Error::invalid(format!(
            "bound undefined for alpha * L = {al} >= 1"
        )));
    }
    let c = variance_constant(inputs);
    let term = (c * inputs.d as f64).sqrt() / (1.0 - al.sqrt())
        + inputs.init_dist / inputs.alpha.sqrt();
    Ok(term * term / (2.0 * k as f64))
}

/// Bound on `E ||beta_avg_k - beta*||^2` under a ridge penalty `lambda > 0`.
pub fn ridge_iterate_bound(inputs: &BoundInputs, lambda: f64, k: u64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::invalid("ridge iterate bound needs lambda > 0"));
    }
    Ok(excess_risk_bound(inputs, k)? / lambda)
}
