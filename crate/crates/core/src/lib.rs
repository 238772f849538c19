//! Streaming least-squares regression with missing covariates.
//!
//! Missing entries are imputed by zero and the stochastic gradient is
//! debiased using the per-feature observation probabilities, so that its
//! expectation over the missingness mask equals the complete-data gradient.
//! Averaged SGD with a constant step then reaches an `O(1/k)` excess risk.
//!
//! Layout:
//!
//! * [`data`]: masked rows, observations, missingness probabilities, optimizer state.
//! * [`gradient`]: the debiased gradient (plain, ridge, polynomial).
//! * [`optimizer`]: averaged SGD driver, non-averaged baselines, naive-imputation baselines.
//! * [`lipschitz`]: oracle and incomplete-data Lipschitz estimates for step sizes.
//! * [`polyfeat`]: degree-2 feature expansion and its co-observation matrix.
//! * [`synthgen`]: synthetic Gaussian data and the theoretical risk bound.
//! * [`risk`]: empirical/population excess risk and reference minimizers.
//! * [`ingest`], [`model`], [`trace`], [`bench`], [`pipeline`]: file formats and
//!   the fit/predict/bench front ends used by the command-line tool.

pub mod bench;
pub mod data;
pub mod error;
pub mod gradient;
pub mod ingest;
pub mod lipschitz;
pub mod model;
pub mod optimizer;
pub mod pipeline;
pub mod polyfeat;
pub mod risk;
pub mod synthgen;
pub mod trace;

pub use data::{
    MaskedVector, MissingnessModel, Observation, OptimizerState, Provenance, RegularizerConfig,
    StepPolicy, Warning,
};
pub use error::{Error, Result};
pub use gradient::GradientKind;
pub use optimizer::{AlgorithmSpec, Method, RunConfig, RunOutput, Sampling, TraceRecord};
