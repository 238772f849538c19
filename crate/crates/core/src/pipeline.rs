//! Fit and predict on CSV data.
//!
//! Fitting ingests the training file, optionally expands degree-2 features,
//! estimates the Lipschitz constant (oracle when probabilities are supplied
//! and the data are complete, otherwise from the incomplete rows), makes one
//! pass of averaged SGD and packs the result into a [`ModelFile`].

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::data::{MaskedVector, MissingnessModel, Observation, Warning};
use crate::error::{Error, Result};
use crate::gradient::GradientKind;
use crate::ingest::{read_complete_rows, IngestOptions, Ingested, DEFAULT_NA_TOKENS};
use crate::lipschitz::{
    lipschitz_from_na, lipschitz_from_na_poly, lipschitz_oracle, lipschitz_oracle_poly,
    LipschitzEstimate, LipschitzMethod,
};
use crate::model::{FitMethod, ModelFile, SCHEMA_VERSION};
use crate::optimizer::{
    run, run_complete_case, run_mean_imputed, AlgorithmSpec, BaselineOptions, Method, RunConfig,
};
use crate::polyfeat::FeatureMap;
use crate::risk::relative_prediction_error;
use crate::StepPolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub target: String,
    /// Known observation probabilities; estimated from the data otherwise.
    pub probs: Option<Vec<f64>>,
    pub lambda: f64,
    pub poly2: bool,
    /// `None` picks `1/(2L)`.
    pub alpha: Option<f64>,
    pub seed: u64,
    pub scale: bool,
    pub method: FitMethod,
    pub na_tokens: Vec<String>,
}

impl FitOptions {
    pub fn new(target: impl Into<String>) -> Self {
        FitOptions {
            target: target.into(),
            probs: None,
            lambda: 0.0,
            poly2: false,
            alpha: None,
            seed: 0,
            scale: false,
            method: FitMethod::Debiased,
            na_tokens: DEFAULT_NA_TOKENS.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn ingest_options(&self) -> IngestOptions {
        IngestOptions {
            na_tokens: self.na_tokens.clone(),
            target: self.target.clone(),
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: ModelFile,
    pub warnings: Vec<Warning>,
}

pub fn fit_reader<R: Read>(input: R, opts: &FitOptions) -> Result<FitReport> {
    let ing = crate::ingest::ingest_reader(input, &opts.ingest_options())?;
    fit_ingested(ing, opts)
}

pub fn fit_ingested(ing: Ingested, opts: &FitOptions) -> Result<FitReport> {
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(Error::invalid("lambda must be finite and nonnegative"));
    }
    if let Some(a) = opts.alpha {
        StepPolicy::constant(a)?;
    }
    let d_raw = ing.feature_names.len();
    let mut warnings = ing.warnings;
    let miss = match &opts.probs {
        Some(p) if p.len() != d_raw => {
            return Err(Error::invalid(format!(
                "{} probabilities supplied for {d_raw} covariates",
                p.len()
            )))
        }
        Some(p) => MissingnessModel::supplied(p.clone())?,
        None => ing.miss.clone(),
    };
    let map = if opts.poly2 {
        if opts.method != FitMethod::Debiased {
            return Err(Error::invalid(
                "polynomial features are only supported with the debiased method",
            ));
        }
        Some(FeatureMap::degree2(d_raw)?)
    } else {
        None
    };
    let obs = &ing.observations;
    let cfg = |lipschitz: Option<f64>| RunConfig {
        seed: opts.seed,
        lipschitz,
        record_time: false,
        ..RunConfig::stream()
    };

    let (spec, lipschitz, out) = match opts.method {
        FitMethod::Debiased => {
            let l = debiased_lipschitz(obs.iter().map(|o| &o.x), &miss, map.as_ref(), opts.probs.is_some())?;
            warnings.extend(l.1);
            let l = l.0;
            let alpha = opts.alpha.unwrap_or(l.suggested_alpha);
            let gradient = match &map {
                Some(m) => GradientKind::PolyDebiased {
                    map: m.clone(),
                    lambda: opts.lambda,
                },
                None if opts.lambda > 0.0 => GradientKind::RidgeDebiased { lambda: opts.lambda },
                None => GradientKind::PlainDebiased,
            };
            let spec = AlgorithmSpec::avsgd(alpha).with_gradient(gradient);
            let out = match &map {
                Some(m) => {
                    let expanded = obs
                        .iter()
                        .map(|o| Observation::new(m.expand_row(&o.x)?, o.y))
                        .collect::<Result<Vec<_>>>()?;
                    run(&expanded, &miss, &spec, &cfg(Some(l.value)), None)?
                }
                None => run(obs, &miss, &spec, &cfg(Some(l.value)), None)?,
            };
            (spec, Some(l), out)
        }
        FitMethod::MeanImputed | FitMethod::CompleteCase => {
            let b = BaselineOptions {
                alpha: opts.alpha,
                lambda: opts.lambda,
            };
            let out = if opts.method == FitMethod::MeanImputed {
                run_mean_imputed(obs, b, &cfg(None), None)?
            } else {
                run_complete_case(obs, b, &cfg(None), None)?
            };
            let alpha = match out.state.step {
                StepPolicy::Constant(a) => a,
                StepPolicy::InverseSqrt => unreachable!("baselines use a constant step"),
            };
            let l = match opts.alpha {
                None => Some(LipschitzEstimate::new(0.5 / alpha, LipschitzMethod::Oracle)?),
                Some(_) => None,
            };
            let spec = AlgorithmSpec {
                method: Method::AvSgd { alpha },
                gradient: GradientKind::LeastSquares { lambda: opts.lambda },
            };
            (spec, l, out)
        }
    };
    warnings.extend(out.warnings.iter().cloned());
    let alpha = match spec.method {
        Method::AvSgd { alpha } => alpha,
        _ => unreachable!("fit always uses averaged SGD"),
    };
    let model = ModelFile {
        schema_version: SCHEMA_VERSION,
        d_raw,
        feature_names: ing.feature_names,
        target: ing.target,
        feature_map: map,
        missingness: miss,
        fit_method: opts.method,
        algorithm: spec,
        alpha,
        lambda: opts.lambda,
        lipschitz,
        seed: opts.seed,
        scaling: ing.scaling,
        n_train: obs.len(),
        rejected_rows: ing.rejected_rows,
        beta_avg: out.state.beta_avg,
        beta: out.state.beta,
    };
    model.validate()?;
    Ok(FitReport { model, warnings })
}

/// Oracle estimate when `p` is known and every row is complete, otherwise the
/// incomplete-data estimate.
fn debiased_lipschitz<'a>(
    rows: impl Iterator<Item = &'a MaskedVector> + Clone,
    miss: &MissingnessModel,
    map: Option<&FeatureMap>,
    probs_supplied: bool,
) -> Result<(LipschitzEstimate, Vec<Warning>)> {
    let complete = rows.clone().all(MaskedVector::is_complete);
    if probs_supplied && complete {
        let rows: Vec<&MaskedVector> = rows.collect();
        let d = miss.dim();
        let x = DMatrix::from_fn(rows.len(), d, |i, j| rows[i].values()[j]);
        let l = match map {
            Some(m) => lipschitz_oracle_poly(&x, m, miss)?,
            None => lipschitz_oracle(&x, miss)?,
        };
        return Ok((l, Vec::new()));
    }
    let rows: Vec<MaskedVector> = rows.cloned().collect();
    let (l, _, w) = match map {
        Some(m) => lipschitz_from_na_poly(&rows, m)?,
        None => lipschitz_from_na(&rows)?,
    };
    Ok((l, w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y_hat: Vec<f64>,
    /// `||y_hat - y||^2 / ||y||^2` when the target is present; with a scaled
    /// model `y` is centered by the training mean first, so predicting the
    /// mean scores 1.
    pub relative_error: Option<f64>,
}

/// Predicts every row of a complete test file. The target column defaults to
/// the one the model was trained on and is optional in the file.
pub fn predict_reader<R: Read>(
    model: &ModelFile,
    input: R,
    target: Option<&str>,
    na_tokens: &[String],
) -> Result<Prediction> {
    model.validate()?;
    let target = target.unwrap_or(&model.target);
    let rows = read_complete_rows(input, &model.feature_names, Some(target), na_tokens)?;
    let y_hat = rows
        .rows
        .iter()
        .map(|r| model.predict_row(r))
        .collect::<Result<Vec<_>>>()?;
    let relative_error = match &rows.target {
        None => None,
        Some(y) => {
            let center = model.scaling.as_ref().map(|s| s.target_mean).unwrap_or(0.0);
            let yc: Vec<f64> = y.iter().map(|v| v - center).collect();
            let hc: Vec<f64> = y_hat.iter().map(|v| v - center).collect();
            Some(relative_prediction_error(&hc, &yc)?)
        }
    };
    Ok(Prediction {
        y_hat,
        relative_error,
    })
}

pub fn write_predictions<W: Write>(mut out: W, pred: &Prediction) -> Result<()> {
    writeln!(out, "prediction")?;
    for v in &pred.y_hat {
        writeln!(out, "{v}")?;
    }
    out.flush()?;
    Ok(())
}
