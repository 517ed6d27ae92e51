//! Command-line interface: `evaluate`, `synth` and `sweep`.
//!
//! Exit codes: 0 on success, 1 on validation or usage errors, 2 on I/O errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::geometry::Similarity;
use crate::io::DatasetBundle;
use crate::kde::Execution;
use crate::links::LinkSpec;
use crate::report::{evaluate_report, sweep_gamma, BandwidthPolicy, ReportConfig};
use crate::synth::{convergence_experiment, BandwidthChoice, Estimator, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "detcal", version, about = "Calibration error estimation for object detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute a calibration report for COCO-format detections.
    Evaluate(EvaluateArgs),
    /// Run the synthetic convergence benchmark.
    Synth(SynthArgs),
    /// Evaluate the headline CE over a list of score thresholds.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// COCO results JSON (array of detections).
    #[arg(long)]
    detections: PathBuf,
    /// COCO annotation JSON.
    #[arg(long = "ground-truth")]
    ground_truth: PathBuf,
    /// identity | hinge | threshold:<b> | ramp:<a>:<b>
    #[arg(long, default_value = "threshold:0.5")]
    link: String,
    /// Detections scoring below this are discarded.
    #[arg(long = "score-threshold", default_value_t = 0.5, allow_negative_numbers = true)]
    score_threshold: f64,
    /// `auto` (leave-one-out maximum likelihood) or a positive value.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    bandwidth: String,
    /// D-ECE bins.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value = "iou")]
    similarity: String,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Select one bandwidth from all classes' scores.
    #[arg(long = "shared-bandwidth")]
    shared_bandwidth: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Estimate on a seeded subsample of at most this many detections per class.
    #[arg(long = "max-samples")]
    max_samples: Option<usize>,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    sequential: bool,
    /// Leave the timestamp out of the report.
    #[arg(long = "no-timestamp")]
    no_timestamp: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    t1: f64,
    #[arg(long, default_value_t = 0.6, allow_negative_numbers = true)]
    t2: f64,
    /// Number of seeds (0..k).
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Subset of kde_threshold, kde_identity, dece, laece (may be empty).
    #[arg(long, value_delimiter = ',', default_value = "kde_threshold,dece")]
    estimators: Vec<String>,
    /// `auto` or a positive value.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    bandwidth: String,
    /// Draw identity-link correctness from Beta(k s1, k (1 - s1)).
    #[arg(long = "iou-concentration", allow_negative_numbers = true)]
    iou_concentration: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    sequential: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Score thresholds, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    gammas: Vec<f64>,
    /// Regularization weight to echo as a column.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
    #[command(flatten)]
    eval: EvaluateArgs,
}

fn flag_error(flag: &str, e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(format!("--{flag}: {e}"))
}

fn parse_bandwidth(text: &str, shared: bool) -> Result<BandwidthPolicy> {
    match (text, shared) {
        ("auto", false) => Ok(BandwidthPolicy::PerClass),
        ("auto", true) => Ok(BandwidthPolicy::Shared),
        (value, _) => {
            let b: f64 = value
                .parse()
                .map_err(|_| flag_error("bandwidth", format!("'{value}' is neither auto nor a number")))?;
            if !(b > 0.0 && b.is_finite()) {
                return Err(flag_error("bandwidth", format!("{b} must be positive")));
            }
            Ok(BandwidthPolicy::Fixed(b))
        }
    }
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn report_config(args: &EvaluateArgs, bundle: &DatasetBundle) -> Result<ReportConfig> {
    let link: LinkSpec = args.link.parse().map_err(|e| flag_error("link", e))?;
    let similarity: Similarity = args.similarity.parse().map_err(|e| flag_error("similarity", e))?;
    if !(0.0..1.0).contains(&args.score_threshold) {
        return Err(flag_error("score-threshold", format!("{} must lie in [0, 1)", args.score_threshold)));
    }
    if args.bins == 0 {
        return Err(flag_error("bins", "must be at least 1"));
    }
    if args.max_samples.is_some_and(|m| m < 2) {
        return Err(flag_error("max-samples", "must be at least 2"));
    }
    Ok(ReportConfig {
        link,
        score_threshold: args.score_threshold,
        bandwidth: parse_bandwidth(&args.bandwidth, args.shared_bandwidth)?,
        dece_bins: args.bins,
        similarity,
        categories: Some(bundle.category_ids()),
        max_samples: args.max_samples,
        seed: args.seed,
        execution: execution(args.sequential),
        ..ReportConfig::default()
    })
}

fn emit(out: &Option<PathBuf>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        }),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn run_evaluate(args: &EvaluateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let bundle = DatasetBundle::load(&args.detections, &args.ground_truth)?;
    if bundle.clamped_scores > 0 {
        let _ = writeln!(stderr, "warning: clamped {} scores into [0, 1]", bundle.clamped_scores);
    }
    let cfg = report_config(args, &bundle)?;
    let mut report = evaluate_report(&bundle.detections, &bundle.ground_truth, &cfg)?;
    if args.no_timestamp {
        report.timestamp = None;
    }
    let text = match args.format {
        Format::Json => report.to_json()?,
        Format::Csv => report.to_csv()?,
    };
    emit(&args.out, &text, stdout)
}

fn run_sweep(args: &SweepArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<()> {
    let bundle = DatasetBundle::load(&args.eval.detections, &args.eval.ground_truth)?;
    if bundle.clamped_scores > 0 {
        let _ = writeln!(stderr, "warning: clamped {} scores into [0, 1]", bundle.clamped_scores);
    }
    for &g in &args.gammas {
        if !(0.0..1.0).contains(&g) {
            return Err(flag_error("gammas", format!("{g} must lie in [0, 1)")));
        }
    }
    let cfg = report_config(&args.eval, &bundle)?;
    let mut table = sweep_gamma(&bundle.detections, &bundle.ground_truth, &args.gammas, &cfg)?;
    table.lambda = args.lambda;
    let text = match args.eval.format {
        Format::Json => table.to_json()?,
        Format::Csv => table.to_csv()?,
    };
    emit(&args.eval.out, &text, stdout)
}

fn run_synth(args: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    if args.seeds == 0 {
        return Err(flag_error("seeds", "must be at least 1"));
    }
    if args.n.iter().any(|&n| n < 2) {
        return Err(flag_error("n", "every sample size must be at least 2"));
    }
    let estimators = args
        .estimators
        .iter()
        .filter(|e| !e.is_empty())
        .map(|e| e.parse::<Estimator>().map_err(|err| flag_error("estimators", err)))
        .collect::<Result<Vec<_>>>()?;
    let bandwidth = match parse_bandwidth(&args.bandwidth, false)? {
        BandwidthPolicy::Fixed(b) => BandwidthChoice::Fixed(b),
        _ => BandwidthChoice::Auto,
    };
    for (flag, t) in [("t1", args.t1), ("t2", args.t2)] {
        if !(t > 0.0 && t.is_finite()) {
            return Err(flag_error(flag, format!("{t} must be positive")));
        }
    }
    let mut cfg = ExperimentConfig::new(
        args.n.clone(),
        (0..args.seeds).collect(),
        estimators,
        args.t1,
        args.t2,
    );
    cfg.bandwidth = bandwidth;
    cfg.iou_concentration = args.iou_concentration;
    cfg.execution = execution(args.sequential);
    let table = convergence_experiment(&cfg)?;
    let format = match (&args.out, args.format) {
        (Some(p), Format::Csv) if p.extension().is_some_and(|e| e == "json") => Format::Json,
        (_, f) => f,
    };
    let text = match format {
        Format::Json => table.to_json()?,
        Format::Csv => table.to_csv()?,
    };
    emit(&args.out, &text, stdout)
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    EXIT_VALIDATION
                }
            };
        }
    };
    let result = match &cli.command {
        Command::Evaluate(a) => run_evaluate(a, stdout, stderr),
        Command::Synth(a) => run_synth(a, stdout),
        Command::Sweep(a) => run_sweep(a, stdout, stderr),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if e.is_io() {
                EXIT_IO
            } else {
                EXIT_VALIDATION
            }
        }
    }
}
