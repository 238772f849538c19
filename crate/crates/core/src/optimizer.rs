//! SGD drivers.
//!
//! [`run`] implements averaged SGD with debiased gradients (`beta_0 = 0`,
//! constant step, running Polyak-Ruppert average) and the two non-averaged
//! baselines: decaying step `1/sqrt(k+1)` and constant step. The naive
//! baselines [`run_mean_imputed`] and [`run_complete_case`] run ordinary
//! averaged least-squares SGD on mean-imputed rows or on complete rows only.
//!
//! Unbiasedness of the debiased gradient needs the mask of each row to be
//! independent of the current iterate, which only holds on the first pass.
//! [`Sampling::Stream`] enforces a single in-order pass; the multi-pass modes
//! exist to reproduce the saturation that follows and carry no guarantee
//! beyond pass 1.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{MaskedVector, MissingnessModel, Observation, OptimizerState, StepPolicy, Warning};
use crate::error::{Error, Result};
use crate::gradient::{GradientKind, PreparedGradient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum Method {
    /// Averaged SGD with constant step.
    AvSgd { alpha: f64 },
    /// Last iterate, step `1/sqrt(k+1)`.
    SgdDecay,
    /// Last iterate, constant step.
    SgdConst { alpha: f64 },
}

impl Method {
    pub fn step_policy(&self) -> Result<StepPolicy> {
        match *self {
            Method::AvSgd { alpha } | Method::SgdConst { alpha } => StepPolicy::constant(alpha),
            Method::SgdDecay => Ok(StepPolicy::InverseSqrt),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Method::AvSgd { .. } => "avsgd",
            Method::SgdDecay => "sgd_decay",
            Method::SgdConst { .. } => "sgd_const",
        }
    }

    pub fn is_averaged(&self) -> bool {
        matches!(self, Method::AvSgd { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub method: Method,
    pub gradient: GradientKind,
}

impl AlgorithmSpec {
    pub fn avsgd(alpha: f64) -> Self {
        AlgorithmSpec {
            method: Method::AvSgd { alpha },
            gradient: GradientKind::PlainDebiased,
        }
    }

    pub fn with_gradient(mut self, gradient: GradientKind) -> Self {
        self.gradient = gradient;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Each observation once, in arrival order.
    Stream,
    /// Fresh permutation every pass.
    WithoutReplacement,
    /// I.i.d. uniform indices, `n` per pass.
    WithReplacement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub passes: usize,
    pub sampling: Sampling,
    pub seed: u64,
    /// `0`: trace at `k = 1, 2, 4, 8, ...`, at every pass end and at the final
    /// iteration. Otherwise every `trace_every` iterations plus the final one.
    pub trace_every: u64,
    /// Used only to warn when a constant step exceeds `1/(2L)`.
    pub lipschitz: Option<f64>,
    /// Record wall-clock time in the trace; off gives reproducible traces.
    pub record_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            passes: 1,
            sampling: Sampling::Stream,
            seed: 0,
            trace_every: 0,
            lipschitz: None,
            record_time: true,
        }
    }
}

impl RunConfig {
    pub fn stream() -> Self {
        Self::default()
    }

    pub fn multi_pass(passes: usize, sampling: Sampling, seed: u64) -> Self {
        RunConfig {
            passes,
            sampling,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.passes == 0 {
            return Err(Error::invalid("at least one pass is required"));
        }
        if self.sampling == Sampling::Stream && self.passes != 1 {
            return Err(Error::invalid(
                "streaming sampling processes the data exactly once; use passes = 1",
            ));
        }
        Ok(())
    }
}

/// One traced point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub algorithm: String,
    pub k: u64,
    /// Excess risk at the running average.
    pub excess_risk_avg: f64,
    /// Excess risk at the last iterate.
    pub excess_risk_last: f64,
    pub wall_ns: u64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: OptimizerState,
    pub trace: Vec<TraceRecord>,
    pub warnings: Vec<Warning>,
    averaged: bool,
}

impl RunOutput {
    /// The method's estimate: the average for averaged SGD, otherwise the
    /// last iterate.
    pub fn estimate(&self) -> &[f64] {
        if self.averaged {
            &self.state.beta_avg
        } else {
            &self.state.beta
        }
    }
}

/// Excess-risk callback evaluated at traced iterates.
pub type Probe<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Incremental SGD: feed observations one at a time.
#[derive(Debug, Clone)]
pub struct Sgd {
    gradient: PreparedGradient,
    state: OptimizerState,
    scratch: Vec<f64>,
}

impl Sgd {
    pub fn new(spec: &AlgorithmSpec, miss: &MissingnessModel) -> Result<Self> {
        let gradient = PreparedGradient::new(&spec.gradient, miss)?;
        let step = spec.method.step_policy()?;
        let d = gradient.dim();
        Ok(Sgd {
            gradient,
            state: OptimizerState::new(d, step),
            scratch: vec![0.0; d],
        })
    }

    pub fn dim(&self) -> usize {
        self.gradient.dim()
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn into_state(self) -> OptimizerState {
        self.state
    }

    pub fn observe(&mut self, obs: &Observation) -> Result<()> {
        if obs.dim() != self.dim() {
            return Err(Error::invalid(format!(
                "observation has {} features, expected {}",
                obs.dim(),
                self.dim()
            )));
        }
        self.step(&obs.x, obs.y)
    }

    fn step(&mut self, x: &MaskedVector, y: f64) -> Result<()> {
        self.gradient
            .eval_into(x, y, &self.state.beta, &mut self.scratch);
        self.state.apply(&self.scratch)
    }
}

fn is_power_of_two(k: u64) -> bool {
    k.is_power_of_two()
}

/// Runs `spec` over `data`. See the module docs for the sampling modes.
pub fn run(
    data: &[Observation],
    miss: &MissingnessModel,
    spec: &AlgorithmSpec,
    cfg: &RunConfig,
    probe: Option<Probe<'_>>,
) -> Result<RunOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("no observations to fit"));
    }
    let mut sgd = Sgd::new(spec, miss)?;
    if let Some(i) = data.iter().position(|o| o.dim() != sgd.dim()) {
        return Err(Error::invalid(format!(
            "observation {i} has {} features, expected {}",
            data[i].dim(),
            sgd.dim()
        )));
    }

    let mut warnings = Vec::new();
    if let (Some(l), Method::AvSgd { alpha } | Method::SgdConst { alpha }) = (cfg.lipschitz, spec.method)
    {
        let bound = 0.5 / l;
        if alpha > bound {
            log::warn!("step size {alpha} exceeds 1/(2L) = {bound}");
            warnings.push(Warning::StepAboveBound { alpha, bound });
        }
    }

    let n = data.len() as u64;
    let total = n * cfg.passes as u64;
    let algorithm = spec.method.id().to_string();
    let mut trace = Vec::new();
    let start = Instant::now();
    let mut probe_time = Duration::ZERO;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut record = |state: &OptimizerState, trace: &mut Vec<TraceRecord>| {
        if let Some(f) = probe {
            let t0 = Instant::now();
            let rec = TraceRecord {
                algorithm: algorithm.clone(),
                k: state.k,
                excess_risk_avg: f(&state.beta_avg),
                excess_risk_last: f(&state.beta),
                wall_ns: if cfg.record_time {
                    start.elapsed().saturating_sub(probe_time).as_nanos() as u64
                } else {
                    0
                },
                seed: cfg.seed,
            };
            probe_time += t0.elapsed();
            trace.push(rec);
        }
    };

    for _pass in 0..cfg.passes {
        match cfg.sampling {
            Sampling::Stream => {}
            Sampling::WithoutReplacement => order.shuffle(&mut rng),
            Sampling::WithReplacement => {
                for slot in order.iter_mut() {
                    *slot = rng.random_range(0..data.len());
                }
            }
        }
        for &i in &order {
            let obs = &data[i];
            sgd.step(&obs.x, obs.y)?;
            let k = sgd.state.k;
            let due = if cfg.trace_every == 0 {
                is_power_of_two(k) || (cfg.passes > 1 && k % n == 0) || k == total
            } else {
                k % cfg.trace_every == 0 || k == total
            };
            if due {
                record(&sgd.state, &mut trace);
            }
        }
    }

    Ok(RunOutput {
        state: sgd.into_state(),
        trace,
        warnings,
        averaged: spec.method.is_averaged(),
    })
}

/// Options shared by the naive baselines.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BaselineOptions {
    /// `None` uses `1/(2 max ||x||^2)` over the rows actually fitted.
    pub alpha: Option<f64>,
    pub lambda: f64,
}

/// Per-column means over observed entries.
pub fn observed_column_means(data: &[Observation]) -> Result<Vec<f64>> {
    let d = data
        .first()
        .map(Observation::dim)
        .ok_or_else(|| Error::invalid("no observations"))?;
    let mut sums = vec![0.0; d];
    let mut counts = vec![0u64; d];
    for obs in data {
        if obs.dim() != d {
            return Err(Error::invalid("observations have inconsistent dimensions"));
        }
        for j in 0..d {
            if obs.x.mask()[j] {
                sums[j] += obs.x.values()[j];
                counts[j] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .enumerate()
        .map(|(j, (&s, &c))| {
            if c == 0 {
                Err(Error::invalid(format!(
                    "column {j} has no observed entry; its mean is undefined"
                )))
            } else {
                Ok(s / c as f64)
            }
        })
        .collect()
}

fn plain_avsgd(
    rows: &[Observation],
    opts: BaselineOptions,
    cfg: &RunConfig,
    probe: Option<Probe<'_>>,
) -> Result<RunOutput> {
    let d = rows[0].dim();
    let alpha = match opts.alpha {
        Some(a) => a,
        None => {
            let max_sq = rows.iter().map(|o| o.x.squared_norm()).fold(0.0, f64::max);
            if !(max_sq > 0.0) {
                return Err(Error::invalid("all rows are zero; cannot pick a step size"));
            }
            0.5 / max_sq
        }
    };
    let spec = AlgorithmSpec {
        method: Method::AvSgd { alpha },
        gradient: GradientKind::LeastSquares {
            lambda: opts.lambda,
        },
    };
    run(rows, &MissingnessModel::complete(d), &spec, cfg, probe)
}

/// Mean imputation followed by ordinary averaged least-squares SGD.
pub fn run_mean_imputed(
    data: &[Observation],
    opts: BaselineOptions,
    cfg: &RunConfig,
    probe: Option<Probe<'_>>,
) -> Result<RunOutput> {
    let means = observed_column_means(data)?;
    let imputed = data
        .iter()
        .map(|o| {
            let vals: Vec<f64> = o
                .x
                .values()
                .iter()
                .zip(o.x.mask())
                .zip(&means)
                .map(|((&v, &m), &mu)| if m { v } else { mu })
                .collect();
            Observation::new(MaskedVector::complete(vals)?, o.y)
        })
        .collect::<Result<Vec<_>>>()?;
    plain_avsgd(&imputed, opts, cfg, probe)
}

/// Discards every row with a missing entry, then runs ordinary averaged
/// least-squares SGD on what is left.
pub fn run_complete_case(
    data: &[Observation],
    opts: BaselineOptions,
    cfg: &RunConfig,
    probe: Option<Probe<'_>>,
) -> Result<RunOutput> {
    let complete: Vec<Observation> = data.iter().filter(|o| o.x.is_complete()).cloned().collect();
    if complete.is_empty() {
        return Err(Error::invalid("no fully observed row; complete-case analysis is impossible"));
    }
    plain_avsgd(&complete, opts, cfg, probe)
}
