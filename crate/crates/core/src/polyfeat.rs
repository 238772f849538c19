//! Degree-2 polynomial features with missingness bookkeeping.
//!
//! Feature order: raw singletons `x_1..x_d`, then interactions `x_i x_j`
//! (`i < j`, lexicographic), then squares `x_1^2..x_d^2`. For `d = 2` this is
//! `(x1, x2, x1x2, x1^2, x2^2)`. The order is part of the model file format.
//!
//! An expanded feature is observed iff every raw variable in its support is.
//! Under independent Bernoulli masks, features `a` and `b` are jointly
//! observed with probability `U[a,b] = prod_{j in S_a ∪ S_b} p_j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedVector, MissingnessModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFeatureMap", into = "RawFeatureMap")]
pub struct FeatureMap {
    d_raw: usize,
    /// Each feature as a sorted multiset of raw indices, degree 1 or 2.
    features: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct RawFeatureMap {
    d_raw: usize,
    features: Vec<Vec<usize>>,
}

impl From<FeatureMap> for RawFeatureMap {
    fn from(fm: FeatureMap) -> Self {
        RawFeatureMap {
            d_raw: fm.d_raw,
            features: fm.features,
        }
    }
}

impl TryFrom<RawFeatureMap> for FeatureMap {
    type Error = Error;

    fn try_from(raw: RawFeatureMap) -> Result<Self> {
        FeatureMap::from_features(raw.d_raw, raw.features)
    }
}

impl FeatureMap {
    /// Full degree-2 expansion of `d_raw` variables.
    pub fn degree2(d_raw: usize) -> Result<Self> {
        if d_raw == 0 {
            return Err(Error::invalid("feature map needs at least one raw feature"));
        }
        let mut features: Vec<Vec<usize>> = (0..d_raw).map(|j| vec![j]).collect();
        for i in 0..d_raw {
            for j in i + 1..d_raw {
                features.push(vec![i, j]);
            }
        }
        features.extend((0..d_raw).map(|j| vec![j, j]));
        Ok(FeatureMap { d_raw, features })
    }

    /// Validates an explicit feature list: degree at most 2, indices in range,
    /// the first `d_raw` entries are the singletons in order.
    pub fn from_features(d_raw: usize, mut features: Vec<Vec<usize>>) -> Result<Self> {
        if d_raw == 0 || features.len() < d_raw {
            return Err(Error::invalid("feature map must start with every raw singleton"));
        }
        for (f, monomial) in features.iter_mut().enumerate() {
            if monomial.is_empty() || monomial.len() > 2 {
                return Err(Error::invalid(format!(
                    "feature {f} has degree {}, expected 1 or 2",
                    monomial.len()
                )));
            }
            if monomial.iter().any(|&j| j >= d_raw) {
                return Err(Error::invalid(format!(
                    "feature {f} references a raw index >= {d_raw}"
                )));
            }
            monomial.sort_unstable();
            if f < d_raw && monomial.as_slice() != [f] {
                return Err(Error::invalid(format!("feature {f} must be the singleton x{f}")));
            }
        }
        Ok(FeatureMap { d_raw, features })
    }

    pub fn d_raw(&self) -> usize {
        self.d_raw
    }

    pub fn d_exp(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[Vec<usize>] {
        &self.features
    }

    /// Distinct raw variables feature `f` depends on.
    pub fn support(&self, f: usize) -> Vec<usize> {
        let mut s = self.features[f].clone();
        s.dedup();
        s
    }

    /// Human-readable name such as `x1x2` or `x3^2` (1-based).
    pub fn feature_name(&self, f: usize) -> String {
        match self.features[f].as_slice() {
            [a] => format!("x{}", a + 1),
            [a, b] if a == b => format!("x{}^2", a + 1),
            [a, b] => format!("x{}x{}", a + 1, b + 1),
            _ => unreachable!("degree checked at construction"),
        }
    }

    pub fn expand_complete(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.d_raw {
            return Err(Error::invalid(format!(
                "row has {} features, expected {}",
                raw.len(),
                self.d_raw
            )));
        }
        Ok(self
            .features
            .iter()
            .map(|m| m.iter().map(|&j| raw[j]).product())
            .collect())
    }

    /// Expands a masked raw row; an expanded entry is observed iff its whole
    /// support is.
    pub fn expand_row(&self, x: &MaskedVector) -> Result<MaskedVector> {
        let values = self.expand_complete(x.values())?;
        let mask = self
            .features
            .iter()
            .map(|m| m.iter().all(|&j| x.mask()[j]))
            .collect();
        MaskedVector::new(&values, mask)
    }

    /// Co-observation probabilities `U[a,b]` over the expanded features.
    pub fn probability_matrix(&self, miss: &MissingnessModel) -> Result<DMatrix<f64>> {
        if miss.dim() != self.d_raw {
            return Err(Error::invalid(format!(
                "missingness model has {} features, expected {}",
                miss.dim(),
                self.d_raw
            )));
        }
        let p = miss.p();
        let supports: Vec<Vec<usize>> = (0..self.d_exp()).map(|f| self.support(f)).collect();
        let n = self.d_exp();
        let mut u = DMatrix::zeros(n, n);
        let mut union = Vec::with_capacity(4);
        for a in 0..n {
            for b in a..n {
                union.clear();
                union.extend_from_slice(&supports[a]);
                union.extend_from_slice(&supports[b]);
                union.sort_unstable();
                union.dedup();
                let prob: f64 = union.iter().map(|&j| p[j]).product();
                u[(a, b)] = prob;
                u[(b, a)] = prob;
            }
        }
        Ok(u)
    }

    /// `E[phi(x) phi(x)^T]` for `x ~ N(0, sigma)`, via Isserlis' theorem.
    pub fn gaussian_second_moment(&self, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if sigma.nrows() != self.d_raw || sigma.ncols() != self.d_raw {
            return Err(Error::invalid("covariance shape does not match the feature map"));
        }
        let n = self.d_exp();
        let mut h = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let mut idx = self.features[a].clone();
                idx.extend_from_slice(&self.features[b]);
                let m = match idx.as_slice() {
                    [i, j] => sigma[(*i, *j)],
                    [i, j, k, l] => {
                        sigma[(*i, *j)] * sigma[(*k, *l)]
                            + sigma[(*i, *k)] * sigma[(*j, *l)]
                            + sigma[(*i, *l)] * sigma[(*j, *k)]
                    }
                    // Odd moments of a centered Gaussian vanish.
                    _ => 0.0,
                };
                h[(a, b)] = m;
                h[(b, a)] = m;
            }
        }
        Ok(h)
    }
}
