//! Benchmark harness: synthetic data, an algorithm grid, one trace per
//! replication and a summary across replications.
//!
//! Configured by TOML:
//!
//! ```toml
//! scenario = "fig2"
//! d = 10
//! n = 100000
//! p = { low = 0.5, high = 1.0 }
//! seed = 7
//! replications = 4
//! reference = "population"
//! ```
//!
//! Scenarios only change defaults (sample size, passes, probabilities,
//! design and the algorithm grid); every field can be overridden.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MissingnessModel, Observation, Warning};
use crate::error::{Error, Result};
use crate::gradient::GradientKind;
use crate::lipschitz::{lipschitz_from_na, lipschitz_oracle, lipschitz_oracle_poly};
use crate::optimizer::{
    run, run_complete_case, run_mean_imputed, AlgorithmSpec, BaselineOptions, Method, Probe,
    RunConfig, RunOutput, Sampling, TraceRecord,
};
use crate::risk::ExcessRisk;
use crate::synthgen::{derive_seed, draw_probabilities, generate, Design, SynthConfig, SynthData};
use crate::trace::{summarize, write_summary, SummaryRow, TraceFile};

/// Environment variable capping the number of concurrent replications.
pub const THREADS_ENV: &str = "MISSREGRESS_THREADS";

/// Largest raw dimension a benchmark accepts.
pub const MAX_D: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// `n = 1000`, 100 passes without replacement.
    Fig1Left,
    /// One pass over `n = 100000` rows.
    Fig1Right,
    /// Heterogeneous `p`, debiased with the true `p` and with its mean.
    Fig2,
    /// Step size from the oracle vs the incomplete-data Lipschitz estimate.
    #[serde(rename = "figS1")]
    FigS1,
    /// Degree-2 polynomial design.
    #[serde(rename = "figS3")]
    FigS3,
    /// No defaults for the algorithm grid.
    Custom,
}

impl Scenario {
    pub fn id(&self) -> &'static str {
        match self {
            Scenario::Fig1Left => "fig1_left",
            Scenario::Fig1Right => "fig1_right",
            Scenario::Fig2 => "fig2",
            Scenario::FigS1 => "figS1",
            Scenario::FigS3 => "figS3",
            Scenario::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchAlgorithm {
    Avsgd,
    SgdDecay,
    SgdConst,
    /// Averaged SGD debiased with the mean of `p` in place of each `p_j`.
    AvsgdIgnoreHeterogeneity,
    /// Averaged SGD with step `1/(2L)` from the incomplete-data estimate.
    AvsgdNaLipschitz,
    MeanAvsgd,
    CompleteCase,
    /// Averaged SGD on degree-2 features with elementwise debiasing.
    PolyAvsgd,
}

impl BenchAlgorithm {
    pub fn id(&self) -> &'static str {
        match self {
            BenchAlgorithm::Avsgd => "avsgd",
            BenchAlgorithm::SgdDecay => "sgd_decay",
            BenchAlgorithm::SgdConst => "sgd_const",
            BenchAlgorithm::AvsgdIgnoreHeterogeneity => "avsgd_ignore_heterogeneity",
            BenchAlgorithm::AvsgdNaLipschitz => "avsgd_na_lipschitz",
            BenchAlgorithm::MeanAvsgd => "mean_avsgd",
            BenchAlgorithm::CompleteCase => "complete_case",
            BenchAlgorithm::PolyAvsgd => "poly_avsgd",
        }
    }

    fn needs_design(&self) -> Design {
        match self {
            BenchAlgorithm::PolyAvsgd => Design::Degree2,
            _ => Design::Linear,
        }
    }
}

/// Excess-risk reference for traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Exact minimizer of the empirical risk on the complete data.
    #[default]
    Erm,
    /// The generating parameter under the known covariate distribution.
    Population,
}

impl Reference {
    fn id(&self) -> &'static str {
        match self {
            Reference::Erm => "erm",
            Reference::Population => "population",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProbSpec {
    Scalar(f64),
    Vector(Vec<f64>),
    Range { low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub scenario: Scenario,
    pub d: Option<usize>,
    pub n: Option<usize>,
    pub p: Option<ProbSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    pub noise_std: Option<f64>,
    pub passes: Option<usize>,
    pub sampling: Option<Sampling>,
    #[serde(default)]
    pub reference: Reference,
    /// Wall-clock column; off keeps traces reproducible.
    #[serde(default)]
    pub record_time: bool,
    /// Step size override for the constant-step methods.
    pub alpha: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
    pub design: Option<Design>,
    pub beta_star: Option<Vec<f64>>,
    pub algorithms: Option<Vec<BenchAlgorithm>>,
}

fn one() -> usize {
    1
}

impl BenchConfig {
    /// Defaults of `scenario` with nothing overridden.
    pub fn scenario(scenario: Scenario) -> Self {
        BenchConfig {
            scenario,
            d: None,
            n: None,
            p: None,
            seed: 0,
            replications: 1,
            noise_std: None,
            passes: None,
            sampling: None,
            reference: Reference::Erm,
            record_time: false,
            alpha: None,
            lambda: 0.0,
            design: None,
            beta_star: None,
            algorithms: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: BenchConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("bad bench config: {e}")))?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Applies scenario defaults and validates.
    pub fn resolve(&self) -> Result<ResolvedBench> {
        use Scenario::*;
        let design = self.design.unwrap_or(match self.scenario {
            FigS3 => Design::Degree2,
            _ => Design::Linear,
        });
        let d = self.d.unwrap_or(if self.scenario == FigS3 { 2 } else { 10 });
        let n = self.n.unwrap_or(if self.scenario == Fig1Left { 1_000 } else { 100_000 });
        let passes = self
            .passes
            .unwrap_or(if self.scenario == Fig1Left { 100 } else { 1 });
        let sampling = self.sampling.unwrap_or(if passes > 1 {
            Sampling::WithoutReplacement
        } else {
            Sampling::Stream
        });
        let algorithms = match (&self.algorithms, self.scenario) {
            (Some(a), _) => a.clone(),
            (None, Fig1Left | Fig1Right) => vec![
                BenchAlgorithm::Avsgd,
                BenchAlgorithm::SgdDecay,
                BenchAlgorithm::SgdConst,
            ],
            (None, Fig2) => vec![
                BenchAlgorithm::Avsgd,
                BenchAlgorithm::AvsgdIgnoreHeterogeneity,
            ],
            (None, FigS1) => vec![BenchAlgorithm::Avsgd, BenchAlgorithm::AvsgdNaLipschitz],
            (None, FigS3) => vec![BenchAlgorithm::PolyAvsgd],
            (None, Custom) => {
                return Err(Error::invalid("custom scenario needs an algorithms list"))
            }
        };
        if d == 0 || n == 0 {
            return Err(Error::invalid("d and n must be positive"));
        }
        // The generator builds a dense d x d covariance.
        if d > MAX_D {
            return Err(Error::invalid(format!("d = {d} exceeds the limit of {MAX_D}")));
        }
        let p = match self.p.clone().unwrap_or(match self.scenario {
            Fig2 => ProbSpec::Range { low: 0.5, high: 1.0 },
            _ => ProbSpec::Scalar(0.7),
        }) {
            ProbSpec::Scalar(v) => vec![v; d],
            ProbSpec::Vector(v) => v,
            ProbSpec::Range { low, high } => draw_probabilities(d, low, high, self.seed)?,
        };

        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if passes == 0 || (sampling == Sampling::Stream && passes != 1) {
            return Err(Error::invalid("streaming runs make exactly one pass"));
        }
        if algorithms.is_empty() {
            return Err(Error::invalid("empty algorithm list"));
        }
        if let Some(a) = algorithms.iter().find(|a| a.needs_design() != design) {
            return Err(Error::invalid(format!(
                "algorithm {} does not apply to the {design:?} design",
                a.id()
            )));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("alpha must be positive"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and nonnegative"));
        }
        if self.reference == Reference::Population && self.lambda != 0.0 {
            return Err(Error::invalid(
                "the population reference is the generating parameter; use lambda = 0",
            ));
        }
        let mut synth = SynthConfig::new(d, n, p, self.seed);
        synth.design = design;
        synth.beta_star = self.beta_star.clone();
        if let Some(s) = self.noise_std {
            synth.noise_std = s;
        }
        // Validates p, noise and beta_star.
        synth.resolved_beta_star()?;
        MissingnessModel::supplied(synth.p.clone())?;
        if synth.p.len() != d {
            return Err(Error::invalid(format!("{} probabilities for d = {d}", synth.p.len())));
        }
        if !(synth.noise_std >= 0.0 && synth.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and nonnegative"));
        }
        Ok(ResolvedBench {
            synth,
            passes,
            sampling,
            algorithms,
        })
    }
}

/// A config with scenario defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBench {
    pub synth: SynthConfig,
    pub passes: usize,
    pub sampling: Sampling,
    pub algorithms: Vec<BenchAlgorithm>,
}

#[derive(Debug, Clone)]
pub struct ReplicationOutput {
    pub replication: usize,
    pub seed: u64,
    pub trace: TraceFile,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub replications: Vec<ReplicationOutput>,
    pub summary: Vec<SummaryRow>,
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Runs every algorithm on replication `r`.
pub fn run_replication(cfg: &BenchConfig, r: usize) -> Result<ReplicationOutput> {
    let res = cfg.resolve()?;
    let seed = derive_seed(cfg.seed, r as u64);
    let mut synth = res.synth.clone();
    synth.seed = seed;
    let data = generate(&synth)?;

    let probe_box: Box<dyn Fn(&[f64]) -> f64 + Sync> = match cfg.reference {
        Reference::Erm => {
            let p = data.empirical_probe(cfg.lambda)?;
            Box::new(move |b: &[f64]| p.excess_risk(b))
        }
        Reference::Population => {
            let p = data.population_probe()?;
            Box::new(move |b: &[f64]| p.excess_risk(b))
        }
    };
    let probe: Probe<'_> = &*probe_box;

    let l_oracle = match &data.feature_map {
        Some(fm) => lipschitz_oracle_poly(&data.x, fm, &data.miss)?,
        None => lipschitz_oracle(&data.x, &data.miss)?,
    };
    let alpha = cfg.alpha.unwrap_or(l_oracle.suggested_alpha);
    let run_cfg = RunConfig {
        passes: res.passes,
        sampling: res.sampling,
        seed,
        trace_every: 0,
        lipschitz: Some(l_oracle.value),
        record_time: cfg.record_time,
    };

    let mut header = vec![
        ("scenario".to_string(), cfg.scenario.id().to_string()),
        ("reference".to_string(), cfg.reference.id().to_string()),
        ("seed".to_string(), seed.to_string()),
        ("base_seed".to_string(), cfg.seed.to_string()),
        ("replication".to_string(), r.to_string()),
        ("d".to_string(), synth.d.to_string()),
        ("n".to_string(), synth.n.to_string()),
        ("passes".to_string(), res.passes.to_string()),
        ("p".to_string(), fmt_list(&synth.p)),
        ("beta_star".to_string(), fmt_list(&data.beta_star)),
        ("lipschitz_oracle".to_string(), l_oracle.value.to_string()),
        ("alpha".to_string(), alpha.to_string()),
        ("lambda".to_string(), cfg.lambda.to_string()),
    ];
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    for alg in &res.algorithms {
        let (out, extra) = run_algorithm(*alg, &data, cfg.lambda, alpha, &run_cfg, probe)?;
        header.extend(extra);
        warnings.extend(out.warnings);
        records.extend(out.trace.into_iter().map(|rec| TraceRecord {
            algorithm: alg.id().to_string(),
            ..rec
        }));
    }
    let trace = TraceFile { header, records };
    trace.validate()?;
    Ok(ReplicationOutput {
        replication: r,
        seed,
        trace,
        warnings,
    })
}

fn debiased_kind(data: &SynthData, lambda: f64) -> GradientKind {
    match &data.feature_map {
        Some(fm) => GradientKind::PolyDebiased {
            map: fm.clone(),
            lambda,
        },
        None if lambda > 0.0 => GradientKind::RidgeDebiased { lambda },
        None => GradientKind::PlainDebiased,
    }
}

type Extra = Vec<(String, String)>;

fn run_algorithm(
    alg: BenchAlgorithm,
    data: &SynthData,
    lambda: f64,
    alpha: f64,
    cfg: &RunConfig,
    probe: Probe<'_>,
) -> Result<(RunOutput, Extra)> {
    let expanded;
    let obs: &[Observation] = if data.feature_map.is_some() {
        expanded = data.model_observations()?;
        &expanded
    } else {
        &data.observations
    };
    let kind = debiased_kind(data, lambda);
    let spec = |method| AlgorithmSpec {
        method,
        gradient: kind.clone(),
    };
    let baseline = BaselineOptions {
        alpha: None,
        lambda,
    };
    let out = match alg {
        BenchAlgorithm::Avsgd | BenchAlgorithm::PolyAvsgd => {
            run(obs, &data.miss, &spec(Method::AvSgd { alpha }), cfg, Some(probe))?
        }
        BenchAlgorithm::SgdDecay => run(obs, &data.miss, &spec(Method::SgdDecay), cfg, Some(probe))?,
        BenchAlgorithm::SgdConst => {
            run(obs, &data.miss, &spec(Method::SgdConst { alpha }), cfg, Some(probe))?
        }
        BenchAlgorithm::AvsgdIgnoreHeterogeneity => {
            let mean_p = data.miss.mean_p();
            let wrong = MissingnessModel::homogeneous(data.d(), mean_p)?;
            let out = run(obs, &wrong, &spec(Method::AvSgd { alpha }), cfg, Some(probe))?;
            return Ok((out, vec![("ignore_heterogeneity_p".into(), mean_p.to_string())]));
        }
        BenchAlgorithm::AvsgdNaLipschitz => {
            let rows: Vec<_> = obs.iter().map(|o| o.x.clone()).collect();
            let (est, _, _) = lipschitz_from_na(&rows)?;
            let cfg = RunConfig {
                lipschitz: None,
                ..cfg.clone()
            };
            let out = run(
                obs,
                &data.miss,
                &spec(Method::AvSgd {
                    alpha: est.suggested_alpha,
                }),
                &cfg,
                Some(probe),
            )?;
            return Ok((out, vec![("lipschitz_from_na".into(), est.value.to_string())]));
        }
        BenchAlgorithm::MeanAvsgd => run_mean_imputed(obs, baseline, cfg, Some(probe))?,
        BenchAlgorithm::CompleteCase => run_complete_case(obs, baseline, cfg, Some(probe))?,
    };
    Ok((out, Vec::new()))
}

/// Replication parallelism from [`THREADS_ENV`], if set to a positive count.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Runs all replications, concurrently up to `threads` (default: rayon's).
pub fn run_bench(cfg: &BenchConfig, threads: Option<usize>) -> Result<BenchOutput> {
    cfg.resolve()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker threads: {e}")))?;
    let replications = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replication(cfg, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(replications.iter().map(|r| r.trace.records.as_slice()));
    Ok(BenchOutput {
        replications,
        summary,
    })
}

/// Writes `trace_rep{r}.csv` per replication and `summary.ndjson` into `dir`.
pub fn write_bench(dir: impl AsRef<Path>, out: &BenchOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for rep in &out.replications {
        let f = fs::File::create(dir.join(format!("trace_rep{}.csv", rep.replication)))?;
        rep.trace.write(std::io::BufWriter::new(f))?;
    }
    let f = fs::File::create(dir.join("summary.ndjson"))?;
    write_summary(std::io::BufWriter::new(f), &out.summary)?;
    Ok(())
}
