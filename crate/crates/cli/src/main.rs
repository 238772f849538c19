use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use missregress::bench::{run_bench, threads_from_env, write_bench, BenchConfig};
use missregress::ingest::{parse_probs, DEFAULT_NA_TOKENS};
use missregress::model::{FitMethod, ModelFile};
use missregress::pipeline::{fit_reader, predict_reader, write_predictions, FitOptions};
use missregress::Error;

/// Averaged SGD for least-squares regression with missing covariates.
#[derive(Parser)]
#[command(name = "missregress", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a CSV file with missing entries.
    Fit(FitArgs),
    /// Predict a complete CSV file with a fitted model.
    Predict(PredictArgs),
    /// Run a synthetic benchmark and write traces.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Zero imputation with debiased gradients.
    Debiased,
    /// Mean imputation, ordinary gradients.
    Mean,
    /// Complete rows only.
    CompleteCase,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
    /// Known observation probabilities, one per covariate: `0.9,0.7,...`.
    #[arg(long)]
    probs: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    /// Expand to all degree-2 monomials.
    #[arg(long)]
    poly2: bool,
    #[arg(long, conflicts_with = "auto_alpha")]
    alpha: Option<f64>,
    /// Use `1/(2L)` with `L` estimated from the data (the default).
    #[arg(long)]
    auto_alpha: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standardize columns with statistics of their observed entries.
    #[arg(long)]
    scale: bool,
    #[arg(long, value_enum, default_value = "debiased")]
    method: MethodArg,
    /// Cell values read as missing; repeat to give several. Defaults to
    /// NA, NaN, null and the empty string.
    #[arg(long = "na-token")]
    na_tokens: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Column holding the true response; defaults to the training target.
    #[arg(long)]
    target: Option<String>,
    #[arg(long = "na-token")]
    na_tokens: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML benchmark configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn na_tokens(given: Vec<String>) -> Vec<String> {
    if given.is_empty() {
        DEFAULT_NA_TOKENS.iter().map(|s| s.to_string()).collect()
    } else {
        given
    }
}

fn fit(args: FitArgs) -> Result<(), Error> {
    let mut opts = FitOptions::new(args.target);
    opts.probs = args.probs.as_deref().map(parse_probs).transpose()?;
    opts.lambda = args.lambda;
    opts.poly2 = args.poly2;
    opts.alpha = args.alpha;
    opts.seed = args.seed;
    opts.scale = args.scale;
    opts.method = match args.method {
        MethodArg::Debiased => FitMethod::Debiased,
        MethodArg::Mean => FitMethod::MeanImputed,
        MethodArg::CompleteCase => FitMethod::CompleteCase,
    };
    opts.na_tokens = na_tokens(args.na_tokens);
    let report = fit_reader(BufReader::new(File::open(&args.data)?), &opts)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    let m = &report.model;
    if m.rejected_rows > 0 {
        log::warn!("dropped {} rows with a missing target", m.rejected_rows);
    }
    eprintln!(
        "fitted {} rows, {} coefficients, alpha = {}",
        m.n_train,
        m.d_model(),
        m.alpha
    );
    m.save(&args.out)
}

fn predict(args: PredictArgs) -> Result<(), Error> {
    let model = ModelFile::load(&args.model)?;
    let pred = predict_reader(
        &model,
        BufReader::new(File::open(&args.data)?),
        args.target.as_deref(),
        &na_tokens(args.na_tokens),
    )?;
    write_predictions(BufWriter::new(File::create(&args.out)?), &pred)?;
    if let Some(e) = pred.relative_error {
        println!("relative_error: {e}");
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Error> {
    let cfg = BenchConfig::load(&args.config)?;
    let out = run_bench(&cfg, threads_from_env())?;
    for rep in &out.replications {
        for w in &rep.warnings {
            log::warn!("replication {}: {w}", rep.replication);
        }
    }
    write_bench(&args.out, &out)?;
    eprintln!(
        "wrote {} trace files to {}",
        out.replications.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
