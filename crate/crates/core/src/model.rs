//! The on-disk model: everything `predict` needs, as JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::MissingnessModel;
use crate::error::{Error, Result};
use crate::ingest::Scaling;
use crate::lipschitz::LipschitzEstimate;
use crate::optimizer::AlgorithmSpec;
use crate::polyfeat::FeatureMap;

pub const SCHEMA_VERSION: u32 = 1;

/// How the training rows were turned into SGD input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    /// Zero imputation with debiased gradients.
    Debiased,
    /// Column-mean imputation, ordinary gradients.
    MeanImputed,
    /// Complete rows only, ordinary gradients.
    CompleteCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub d_raw: usize,
    pub feature_names: Vec<String>,
    pub target: String,
    pub feature_map: Option<FeatureMap>,
    /// Missingness of the raw training columns.
    pub missingness: MissingnessModel,
    pub fit_method: FitMethod,
    pub algorithm: AlgorithmSpec,
    pub alpha: f64,
    pub lambda: f64,
    pub lipschitz: Option<LipschitzEstimate>,
    pub seed: u64,
    pub scaling: Option<Scaling>,
    pub n_train: usize,
    pub rejected_rows: usize,
    pub beta_avg: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ModelFile {
    /// Number of coefficients (expanded dimension with polynomial features).
    pub fn d_model(&self) -> usize {
        self.feature_map
            .as_ref()
            .map(FeatureMap::d_exp)
            .unwrap_or(self.d_raw)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.d_raw == 0 {
            return Err(Error::invalid("model has no features"));
        }
        if self.feature_names.len() != self.d_raw {
            return Err(Error::invalid("feature name count does not match d_raw"));
        }
        if self.missingness.dim() != self.d_raw {
            return Err(Error::invalid("missingness model does not match d_raw"));
        }
        if let Some(fm) = &self.feature_map {
            if fm.d_raw() != self.d_raw {
                return Err(Error::invalid("feature map does not match d_raw"));
            }
        }
        let dm = self.d_model();
        if self.beta_avg.len() != dm || self.beta.len() != dm {
            return Err(Error::invalid(format!(
                "coefficient vectors must have length {dm}"
            )));
        }
        if self.beta_avg.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coefficient in model"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("step size must be positive and finite"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if let Some(s) = &self.scaling {
            if s.means.len() != self.d_raw || s.stds.len() != self.d_raw {
                return Err(Error::invalid("scaling does not match d_raw"));
            }
            let ok = |v: f64| v.is_finite();
            let pos = |v: f64| v > 0.0 && v.is_finite();
            if !(s.means.iter().all(|&v| ok(v))
                && s.stds.iter().all(|&v| pos(v))
                && ok(s.target_mean)
                && pos(s.target_std))
            {
                return Err(Error::invalid("scaling must be finite with positive stds"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numerical(format!("cannot serialize model: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("malformed model file: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Prediction for one complete raw row in original units: scale, expand,
    /// `beta_avg^T phi`, then undo the target scaling.
    pub fn predict_row(&self, raw: &[f64]) -> Result<f64> {
        if raw.len() != self.d_raw {
            return Err(Error::invalid(format!(
                "row has {} values, model expects {}",
                raw.len(),
                self.d_raw
            )));
        }
        let mut row = raw.to_vec();
        if let Some(s) = &self.scaling {
            s.apply_row(&mut row);
        }
        let phi = match &self.feature_map {
            Some(fm) => fm.expand_complete(&row)?,
            None => row,
        };
        let yhat: f64 = phi.iter().zip(&self.beta_avg).map(|(a, b)| a * b).sum();
        let yhat = match &self.scaling {
            Some(s) => s.unscale_target(yhat),
            None => yhat,
        };
        if !yhat.is_finite() {
            return Err(Error::Numerical("non-finite prediction".into()));
        }
        Ok(yhat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lipschitz::LipschitzMethod;

    fn sample() -> ModelFile {
        let fm = FeatureMap::degree2(2).unwrap();
        ModelFile {
            schema_version: SCHEMA_VERSION,
            d_raw: 2,
            feature_names: vec!["a".into(), "b".into()],
            target: "y".into(),
            missingness: MissingnessModel::supplied(vec![0.9, 0.7]).unwrap(),
            fit_method: FitMethod::Debiased,
            algorithm: AlgorithmSpec::avsgd(0.01).with_gradient(crate::GradientKind::PolyDebiased {
                map: fm.clone(),
                lambda: 0.1,
            }),
            feature_map: Some(fm),
            alpha: 0.01,
            lambda: 0.1,
            lipschitz: Some(LipschitzEstimate::new(50.0, LipschitzMethod::FromNa).unwrap()),
            seed: 7,
            scaling: Some(Scaling {
                means: vec![1.0, -2.0],
                stds: vec![0.5, 3.0],
                target_mean: 0.1,
                target_std: 2.0,
            }),
            n_train: 100,
            rejected_rows: 3,
            beta_avg: vec![0.1, -0.2, 1.0 / 3.0, 1e-300, 5.0],
            beta: vec![0.0, 1.0, 2.0, 3.0, 4.0],
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = sample();
        let s1 = m.to_json().unwrap();
        let back = ModelFile::from_json(&s1).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), s1);
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_coefficients_survive_round_trip(
            bits in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 10),
        ) {
            let mut m = sample();
            m.beta_avg = bits[..5].to_vec();
            m.beta = bits[5..].to_vec();
            let back = ModelFile::from_json(&m.to_json().unwrap()).unwrap();
            proptest::prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_inconsistent_models() {
        let mut m = sample();
        m.beta.pop();
        assert!(ModelFile::from_json(&serde_json::to_string(&m).unwrap()).is_err());
        let mut m = sample();
        m.schema_version = 99;
        assert!(m.validate().is_err());
        let mut m = sample();
        m.scaling.as_mut().unwrap().stds[0] = 0.0;
        assert!(m.validate().is_err());
        assert!(ModelFile::from_json("{}").is_err());
        assert!(ModelFile::from_json("not json").is_err());
    }

    #[test]
    fn prediction_applies_scaling_and_expansion() {
        let m = sample();
        let raw = [2.0, 1.0];
        let (a, b) = ((2.0 - 1.0) / 0.5, (1.0 + 2.0) / 3.0);
        let phi = [a, b, a * b, a * a, b * b];
        let dot: f64 = phi.iter().zip(&m.beta_avg).map(|(u, v)| u * v).sum();
        let want = dot * 2.0 + 0.1;
        assert!((m.predict_row(&raw).unwrap() - want).abs() < 1e-12);
        assert!(m.predict_row(&[1.0]).is_err());
    }
}
