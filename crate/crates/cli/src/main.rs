use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coxsub::bench::{run_benchmark, BenchConfig};
use coxsub::data::{
    apply_time_transform, load_csv, split_at_event_times, write_csv, CsvSchema, TimeTransform,
};
use coxsub::simgen::{covariate_names, simulate, SimConfig, Setting};
use coxsub::two_step::baseline_json;
use coxsub::{
    breslow, newton_raphson, two_step_fit, Dataset, Error, Method, NewtonOptions, PhiSource,
    TwoStepOptions, WeightVector,
};
use serde_json::{json, Value};

const SCHEMA_VERSION: u32 = 1;

/// Cox regression on massive rare-event survival data, with optimal
/// subsampling of censored records.
///
/// Exit status: 0 on success, 1 on numerical failure (non-convergence,
/// singular information, monotone likelihood), 2 on usage or I/O errors.
#[derive(Debug, Parser)]
#[command(name = "coxsub", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full-data partial-likelihood fit; writes a JSON result.
    Fit(FitArgs),
    /// Two-step subsampled fit; writes a JSON result.
    Subfit(SubfitArgs),
    /// Generates a simulated dataset as CSV.
    Simulate(SimulateArgs),
    /// Runs Monte Carlo replicates and writes a summary CSV.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input CSV with id, start, stop, event, optional stratum and numeric
    /// covariate columns.
    #[arg(long)]
    input: PathBuf,
    /// Name of the subject id column.
    #[arg(long, default_value = "id")]
    id_col: String,
    /// Name of the entry-time column; entry is 0 when the column is absent.
    #[arg(long, default_value = "start")]
    start_col: String,
    /// Name of the exit-time column.
    #[arg(long, default_value = "stop")]
    stop_col: String,
    /// Name of the 0/1 event column.
    #[arg(long, default_value = "event")]
    event_col: String,
    /// Name of the stratum column; a single stratum when absent.
    #[arg(long, default_value = "stratum")]
    stratum_col: String,
    /// Split every record at the event times of its stratum before fitting.
    #[arg(long)]
    split_at_events: bool,
    /// Add a time-varying effect `COL * log(t)` for the named covariate
    /// (implies --split-at-events).
    #[arg(long, value_name = "COL")]
    tt_log: Option<String>,
}

#[derive(Debug, Args)]
struct NewtonArgs {
    /// Newton-Raphson convergence tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Maximum Newton-Raphson iterations.
    #[arg(long, default_value_t = 25)]
    max_iter: usize,
    /// Report a non-converged fit instead of failing with exit status 1.
    #[arg(long)]
    allow_nonconverged: bool,
}

impl NewtonArgs {
    fn options(&self) -> Result<NewtonOptions, Failure> {
        if !(self.tol > 0.0) {
            return Err(Failure::usage("--tol must be positive"));
        }
        Ok(NewtonOptions {
            init: None,
            tol: self.tol,
            max_iter: self.max_iter,
        })
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    newton: NewtonArgs,
    /// Output path; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Uniform,
    LOpt,
    AOpt,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Uniform => Method::Uniform,
            MethodArg::LOpt => Method::LOpt,
            MethodArg::AOpt => Method::AOpt,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PhiArg {
    /// Estimate from the weighted subsample.
    Subsample,
    /// Exact value from every censored record.
    Full,
}

impl From<PhiArg> for PhiSource {
    fn from(p: PhiArg) -> Self {
        match p {
            PhiArg::Subsample => PhiSource::Subsample,
            PhiArg::Full => PhiSource::FullData,
        }
    }
}

#[derive(Debug, Args)]
struct SubfitArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    newton: NewtonArgs,
    /// Number of censored records drawn in each step.
    #[arg(long)]
    q: usize,
    /// Sampling probabilities for the second step.
    #[arg(long, value_enum, default_value = "l-opt")]
    method: MethodArg,
    /// Master seed for both draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source of the subsampling variance component.
    #[arg(long, value_enum, default_value = "subsample")]
    phi: PhiArg,
    /// Estimate the baseline hazard on the full data instead of the subsample.
    #[arg(long)]
    full_breslow: bool,
    /// Also write the final sampling probabilities as CSV to this path.
    #[arg(long)]
    probs_output: Option<PathBuf>,
    /// Output path; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SettingArg {
    A,
    B,
    C,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::A => Setting::A,
            SettingArg::B => Setting::B,
            SettingArg::C => Setting::C,
        }
    }
}

#[derive(Debug, Args)]
struct DesignArgs {
    /// Covariate design.
    #[arg(long, value_enum, default_value = "a")]
    setting: SettingArg,
    /// Number of subjects.
    #[arg(long, default_value_t = 15_000)]
    n: usize,
    /// Draw entry times uniformly on (0, 0.9 T).
    #[arg(long)]
    delayed_entry: bool,
    /// Add a time-dependent screening-test count covariate.
    #[arg(long)]
    time_dependent: bool,
    /// Worker threads; all available cores when omitted.
    #[arg(long)]
    threads: Option<usize>,
}

impl DesignArgs {
    fn config(&self, seed: u64) -> SimConfig {
        SimConfig::new(self.setting.into(), self.n, seed)
            .with_delayed_entry(self.delayed_entry)
            .with_time_dependent(self.time_dependent)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Simulation seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Number of simulated datasets.
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    /// Comma-separated multipliers of the event count giving q.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    q_mult: Vec<f64>,
    /// Comma-separated subsampling methods to compare.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "uniform,l-opt,a-opt")]
    method: Vec<MethodArg>,
    /// Master seed; replicate seeds derive from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Source of the subsampling variance component.
    #[arg(long, value_enum, default_value = "subsample")]
    phi: PhiArg,
    /// Newton-Raphson convergence tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Maximum Newton-Raphson iterations.
    #[arg(long, default_value_t = 25)]
    max_iter: usize,
    /// Also write the full JSON report to this path.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Summary CSV path; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self::usage(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MissingColumn(_)
            | Error::NonNumericValue { .. }
            | Error::InvalidEvent { .. }
            | Error::InvalidInterval(_)
            | Error::DimensionMismatch { .. }
            | Error::EmptyDataset
            | Error::UnsortedCutpoints
            | Error::NotSplit(_)
            | Error::CovariateIndex { .. }
            | Error::WeightLength { .. }
            | Error::BetaLength { .. }
            | Error::InvalidArgument(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|e| Failure::io(p, e))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn write_json(path: Option<&Path>, value: &Value) -> Result<(), Failure> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(Error::from)?;
    writeln!(out).and_then(|_| out.flush()).map_err(Error::from)?;
    Ok(())
}

fn set_threads(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    Ok(())
}

fn load(args: &InputArgs) -> Result<(Dataset, Vec<String>), Failure> {
    let schema = CsvSchema {
        id: args.id_col.clone(),
        start: args.start_col.clone(),
        stop: args.stop_col.clone(),
        event: args.event_col.clone(),
        stratum: args.stratum_col.clone(),
    };
    if !args.input.exists() {
        return Err(Failure::usage(format!(
            "{}: no such file",
            args.input.display()
        )));
    }
    let loaded = load_csv(&args.input, &schema)?;
    let mut names = loaded.covariate_names;
    let mut d = loaded.dataset;
    if let Some(col) = &args.tt_log {
        let k = names
            .iter()
            .position(|n| n == col)
            .ok_or_else(|| Failure::usage(format!("--tt-log: no covariate named `{col}`")))?;
        d = split_at_event_times(&d)?.0;
        d = apply_time_transform(&d, k, TimeTransform::Log)?;
        names.push(format!("{col}:log(t)"));
    } else if args.split_at_events {
        d = split_at_event_times(&d)?.0;
    }
    Ok((d, names))
}

fn cmd_fit(args: FitArgs) -> Result<(), Failure> {
    let opts = args.newton.options()?;
    let (d, names) = load(&args.input)?;
    let w = WeightVector::ones(d.len());
    let fit = newton_raphson(&d, &w, &opts)?;
    if !fit.converged && !args.newton.allow_nonconverged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
        }
        .into());
    }
    let cov = fit.covariance()?;
    let r = cov.nrows();
    let se: Vec<f64> = (0..r).map(|a| cov[(a, a)].max(0.0).sqrt()).collect();
    let rows: Vec<Vec<f64>> = (0..r).map(|a| (0..r).map(|b| cov[(a, b)]).collect()).collect();
    let baseline = breslow(&d, &w, fit.beta.as_slice())?;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "covariates": names,
        "beta": fit.beta.as_slice(),
        "se": se,
        "cov": rows,
        "loglik": fit.loglik,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "max_grad_norm": fit.max_grad_norm,
        "n_records": d.len(),
        "n_events": d.n_events(),
        "baseline": baseline_json(&baseline),
    });
    write_json(args.output.as_deref(), &doc)
}

fn cmd_subfit(args: SubfitArgs) -> Result<(), Failure> {
    let newton = args.newton.options()?;
    let (d, names) = load(&args.input)?;
    let mut opts = TwoStepOptions::new(args.q, args.method.into(), args.seed);
    opts.newton = newton;
    opts.phi = args.phi.into();
    opts.full_data_breslow = args.full_breslow;
    opts.require_converged = !args.newton.allow_nonconverged;
    let est = two_step_fit(&d, &opts)?;
    if let Some(p) = &args.probs_output {
        let f = File::create(p).map_err(|e| Failure::io(p, e))?;
        est.plan.write_csv(&d, BufWriter::new(f))?;
    }
    let mut doc = est.to_json();
    doc["covariates"] = json!(names);
    write_json(args.output.as_deref(), &doc)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    set_threads(args.design.threads)?;
    let cfg = args.design.config(args.seed);
    let d = simulate(&cfg)?;
    let out = open_output(args.output.as_deref())?;
    write_csv(&d, out, Some(&covariate_names(&cfg)))?;
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), Failure> {
    if args.method.is_empty() || args.q_mult.is_empty() {
        return Err(Failure::usage("--method and --q-mult must not be empty"));
    }
    set_threads(args.design.threads)?;
    let mut cfg = BenchConfig::new(args.design.config(0), args.replicates, args.seed);
    cfg.methods = args.method.iter().map(|&m| m.into()).collect();
    cfg.q_multipliers = args.q_mult.clone();
    cfg.phi = args.phi.into();
    cfg.newton = NewtonArgs {
        tol: args.tol,
        max_iter: args.max_iter,
        allow_nonconverged: false,
    }
    .options()?;
    let report = run_benchmark(&cfg)?;
    if let Some(p) = &args.json {
        write_json(Some(p), &report.to_json())?;
    }
    let out = open_output(args.output.as_deref())?;
    report.write_csv(out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Subfit(a) => cmd_subfit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
