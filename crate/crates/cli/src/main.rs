use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{Map, Value};

use tracecause::estimation::{load_paired_csv, regression_matrices, second_moments, Divisor};
use tracecause::imaging::{
    build_cases, load_corpus, load_images, originals_experiment, synthetic_corpus, CaseDesign, ExperimentConfig,
    ImageFormat, SyntheticCorpus, DEFAULT_NOISE_LEVEL, DEFAULT_RIDGE, DEFAULT_SIDE,
};
use tracecause::inference::{infer_from_samples, Decision, InferenceConfig};
use tracecause::orbit::{orbit_typicality, GroupKind, TransformationGroup};
use tracecause::seed::derive_seed;
use tracecause::simulation::{
    random_model, run_dimension_sweep, run_noise_sweep, DimensionSweep, EstimationMode, NoiseReference, NoiseSweep,
};
use tracecause_cli::{Payload, RunReport};

/// Decides the causal direction between two multivariate variables from the
/// multiplicativity of renormalized covariance traces.
#[derive(Parser)]
#[command(name = "tracecause", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide X → Y vs Y → X for samples in a CSV file.
    Infer(InferArgs),
    /// Run an accuracy sweep on random linear models.
    Simulate(SimulateArgs),
    /// Typicality of the fitted forward map within a group orbit.
    Orbit(OrbitArgs),
    /// Decide which of two image sets is the original one.
    Images(ImagesArgs),
}

#[derive(Args, Serialize)]
struct OutputArgs {
    /// Also write the report (without timing) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum DivisorArg {
    N,
    #[value(name = "n-1")]
    #[serde(rename = "n-1")]
    NMinusOne,
}

#[derive(Args, Serialize)]
struct InferArgs {
    /// CSV file, one sample per row; an optional non-numeric header row is skipped.
    csv: PathBuf,
    /// Number of leading columns that belong to X.
    #[arg(long)]
    nx: usize,
    /// Width of the undecided band.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "n")]
    divisor: DivisorArg,
    /// Relative ridge added to both covariance blocks.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Recorded in the report; inference itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[command(subcommand)]
    sweep: SweepCommand,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum NoiseReferenceArg {
    Cause,
    Effect,
}

impl From<NoiseReferenceArg> for NoiseReference {
    fn from(r: NoiseReferenceArg) -> Self {
        match r {
            NoiseReferenceArg::Cause => NoiseReference::Cause,
            NoiseReferenceArg::Effect => NoiseReference::Effect,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ModeArg {
    Sample,
    Exact,
}

#[derive(Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SweepCommand {
    /// Accuracy against n = m with N = samples-per-dim · n samples.
    Dimension(DimensionArgs),
    /// Accuracy against the noise level at fixed n, m, N.
    Noise(NoiseArgs),
}

#[derive(Args, Serialize)]
struct SweepCommon {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Which signal the noise power is relative to.
    #[arg(long, value_enum, default_value = "cause")]
    noise_reference: NoiseReferenceArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the sweep table to this CSV file.
    #[arg(long)]
    #[serde(skip)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Serialize)]
struct DimensionArgs {
    /// Dimensions as a comma list of values and inclusive ranges, e.g. `2-50` or `2,5,10`.
    #[arg(long, default_value = "2-50")]
    dims: String,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 2)]
    samples_per_dim: usize,
    #[command(flatten)]
    common: SweepCommon,
}

#[derive(Args, Serialize)]
struct NoiseArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.25,0.5,1,2,4")]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, value_enum, default_value = "sample")]
    mode: ModeArg,
    #[command(flatten)]
    common: SweepCommon,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GroupArg {
    Orthogonal,
    Permutation,
    CyclicShift,
    Trivial,
}

impl From<GroupArg> for GroupKind {
    fn from(g: GroupArg) -> Self {
        match g {
            GroupArg::Orthogonal => GroupKind::Orthogonal,
            GroupArg::Permutation => GroupKind::Permutation,
            GroupArg::CyclicShift => GroupKind::CyclicShift,
            GroupArg::Trivial => GroupKind::Trivial,
        }
    }
}

#[derive(Args, Serialize)]
struct OrbitArgs {
    /// CSV of samples; without it a random model is generated from the model flags.
    csv: Option<PathBuf>,
    #[arg(long, required_unless_present = "model_n")]
    nx: Option<usize>,
    #[arg(long, value_enum, default_value = "orthogonal")]
    group: GroupArg,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cause dimension of the generated model.
    #[arg(long, conflicts_with = "csv")]
    model_n: Option<usize>,
    /// Effect dimension of the generated model (defaults to model-n).
    #[arg(long, requires = "model_n")]
    model_m: Option<usize>,
    #[arg(long, default_value_t = 0.0, requires = "model_n")]
    sigma: f64,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

#[derive(Args, Serialize)]
struct ImagesArgs {
    /// A corpus directory (one class per CSV/PGM file or per subdirectory of PGM files) or a single file.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Use the built-in synthetic texture corpus.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = DEFAULT_SIDE)]
    side: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 600)]
    images_per_class: usize,
    #[arg(long, default_value_t = 10)]
    filters_per_class: usize,
    #[arg(long, default_value_t = 5)]
    kernel_size: usize,
    /// Size of the box blur used as the last filter of each class; 0 disables it.
    #[arg(long, default_value_t = 3)]
    blur_size: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_LEVEL)]
    noise_level: f64,
    /// Add noise to the processed images only.
    #[arg(long)]
    clean_originals: bool,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the per-case table to this CSV file.
    #[arg(long)]
    #[serde(skip)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    output: OutputArgs,
}

fn parameters<T: Serialize>(args: &T) -> anyhow::Result<Map<String, Value>> {
    match serde_json::to_value(args)? {
        Value::Object(map) => Ok(map),
        other => {
            let mut map = Map::new();
            map.insert("value".into(), other);
            Ok(map)
        }
    }
}

fn parse_dims(spec: &str) -> anyhow::Result<Vec<usize>> {
    let mut dims = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: usize = lo.trim().parse().with_context(|| format!("bad range start in {part:?}"))?;
                let hi: usize = hi.trim().parse().with_context(|| format!("bad range end in {part:?}"))?;
                if lo > hi {
                    bail!("empty dimension range {part:?}");
                }
                dims.extend(lo..=hi);
            }
            None => dims.push(part.parse().with_context(|| format!("bad dimension {part:?}"))?),
        }
    }
    if dims.is_empty() {
        bail!("no dimensions given");
    }
    Ok(dims)
}

/// Writes `report` (without timing) to `out` if requested.
fn write_report(report: &RunReport, output: &OutputArgs) -> anyhow::Result<()> {
    if let Some(path) = &output.out {
        let mut stable = report.clone();
        stable.wall_time_ms = None;
        fs::write(path, stable.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn write_csv(path: Option<&Path>, body: String) -> anyhow::Result<()> {
    if let Some(path) = path {
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

struct Outcome {
    report: RunReport,
    exit: u8,
}

fn infer(args: &InferArgs) -> anyhow::Result<Outcome> {
    let data = load_paired_csv(&args.csv, args.nx)?;
    let config = InferenceConfig {
        epsilon: args.epsilon,
        divisor: match args.divisor {
            DivisorArg::N => Divisor::N,
            DivisorArg::NMinusOne => Divisor::NMinusOne,
        },
        ridge: args.ridge,
        ..Default::default()
    };
    let verdict = infer_from_samples(&data, &config)?;
    let exit = if verdict.decision == Decision::Undecided { 1 } else { 0 };
    let report = RunReport::new("infer", parameters(args)?, Payload::Verdict(verdict), args.seed);
    write_report(&report, &args.output)?;
    Ok(Outcome { report, exit })
}

fn simulate(args: &SimulateArgs) -> anyhow::Result<Outcome> {
    let (result, common) = match &args.sweep {
        SweepCommand::Dimension(d) => {
            let sweep = DimensionSweep {
                dims: parse_dims(&d.dims)?,
                sigma: d.sigma,
                trials: d.common.trials,
                epsilon: d.common.epsilon,
                seed: d.common.seed,
                samples_per_dim: d.samples_per_dim,
                noise_reference: d.common.noise_reference.into(),
            };
            (run_dimension_sweep(&sweep)?, &d.common)
        }
        SweepCommand::Noise(n) => {
            let sweep = NoiseSweep {
                sigmas: n.sigmas.clone(),
                n: n.n,
                m: n.m,
                samples: n.samples,
                trials: n.common.trials,
                epsilon: n.common.epsilon,
                mode: match n.mode {
                    ModeArg::Sample => EstimationMode::Sample,
                    ModeArg::Exact => EstimationMode::Exact,
                },
                seed: n.common.seed,
                noise_reference: n.common.noise_reference.into(),
            };
            (run_noise_sweep(&sweep)?, &n.common)
        }
    };
    write_csv(common.csv.as_deref(), result.to_csv_string()?)?;
    let report = RunReport::new("simulate", parameters(args)?, Payload::Sweep(result), common.seed);
    write_report(&report, &common.output)?;
    Ok(Outcome { report, exit: 0 })
}

fn orbit(args: &OrbitArgs) -> anyhow::Result<Outcome> {
    let (cxx, a) = match (&args.csv, args.model_n) {
        (Some(path), _) => {
            let nx = args.nx.context("--nx is required with a CSV input")?;
            let data = load_paired_csv(path, nx)?;
            let pack = second_moments(&data, Divisor::N, 0.0)?;
            let (forward, _) = regression_matrices(&pack)?;
            (pack.cxx, forward)
        }
        (None, Some(n)) => {
            let m = args.model_m.unwrap_or(n);
            let model = random_model(n, m, args.sigma, NoiseReference::Cause, derive_seed(args.seed, 0))?;
            (model.cxx, model.a)
        }
        (None, None) => bail!("give a CSV file or --model-n"),
    };
    let group = TransformationGroup::new(args.group.into(), cxx.dim())?;
    let report = orbit_typicality(&cxx, &a, &group, args.trials, derive_seed(args.seed, 1))?;
    let report = RunReport::new("orbit", parameters(args)?, Payload::Typicality(report), args.seed);
    write_report(&report, &args.output)?;
    Ok(Outcome { report, exit: 0 })
}

fn images(args: &ImagesArgs) -> anyhow::Result<Outcome> {
    let corpus = match &args.input {
        Some(path) if path.is_dir() => load_corpus(path, Some(args.side))?,
        Some(path) => {
            let format = ImageFormat::from_path(path)
                .with_context(|| format!("{}: expected a .csv or .pgm file", path.display()))?;
            vec![load_images(path, format, Some(args.side))?]
        }
        None => synthetic_corpus(
            &SyntheticCorpus {
                classes: args.classes,
                images_per_class: args.images_per_class,
                side: args.side,
                ..Default::default()
            },
            derive_seed(args.seed, 0),
        )?,
    };
    let design = CaseDesign {
        filters_per_class: args.filters_per_class,
        kernel_size: args.kernel_size,
        blur_size: (args.blur_size > 0).then_some(args.blur_size),
    };
    let cases = build_cases(&corpus, &design, derive_seed(args.seed, 1))?;
    let config = ExperimentConfig {
        inference: InferenceConfig {
            epsilon: args.epsilon,
            ridge: args.ridge,
            ..Default::default()
        },
        noise_level: args.noise_level,
        perturb_originals: !args.clean_originals,
        seed: derive_seed(args.seed, 2),
    };
    let result = originals_experiment(&cases, &config)?;
    write_csv(args.csv.as_deref(), result.to_csv_string()?)?;
    let report = RunReport::new("images", parameters(args)?, Payload::Experiment(result.summary), args.seed);
    write_report(&report, &args.output)?;
    Ok(Outcome { report, exit: 0 })
}

fn configure_workers() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("TRACECAUSE_WORKERS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("TRACECAUSE_WORKERS must be a positive integer, got {raw:?}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    configure_workers()?;
    match &cli.command {
        Command::Infer(a) => infer(a),
        Command::Simulate(a) => simulate(a),
        Command::Orbit(a) => orbit(a),
        Command::Images(a) => images(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    match run(&cli) {
        Ok(Outcome { mut report, exit }) => {
            report.wall_time_ms = Some(start.elapsed().as_millis() as u64);
            // a closed pipe is not worth a panic and a stray exit code
            let _ = writeln!(std::io::stdout().lock(), "{}", report.to_json());
            ExitCode::from(exit)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
