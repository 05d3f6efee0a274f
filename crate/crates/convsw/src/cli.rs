//! Command-line surface: `compare` (class-conditional distance matrix),
//! `distance` (two tensor files), `slicer-info` (schedule inspection),
//! and `bench` (synthetic timing).
//!
//! Exit codes: 0 success, 1 runtime/data error (one-line JSON
//! `{code, message}` on stderr), 2 usage error (from argument parsing).
//! `CSW_THREADS` overrides `--threads` when set.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataio::{
    read_tensor_file, split_by_class, DistanceMatrixReport, DistanceResult, LabeledDataset,
    Normalization,
};
use crate::distances::{Method, MethodSpec};
use crate::error::{Error, Result};
use crate::ot::{exact_wasserstein_assignment, PointCloudK};
use crate::rng::RandomSource;
use crate::slicer::{make_k_schedule, SlicerSchedule, SlicerVariant};
use crate::tensor::{vectorize, EmpiricalMeasure};

/// A method flag value: an estimator or the exact assignment oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CliMethod {
    Estimator(Method),
    Exact,
}

impl FromStr for CliMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(CliMethod::Exact);
        }
        Ok(CliMethod::Estimator(s.parse()?))
    }
}

impl std::fmt::Display for CliMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliMethod::Estimator(m) => write!(f, "{m}"),
            CliMethod::Exact => write!(f, "exact"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
struct MethodFlags {
    /// Estimator: sw, csw-{b,s,d}, ncsw-{b,s,d}, max-sw, max-csw-{b,s,d},
    /// prw, cprw-{b,s,d}, or exact
    #[arg(long, value_parser = clap::value_parser!(CliMethod))]
    method: CliMethod,

    /// Transport order
    #[arg(long, default_value_t = 2.0)]
    p: f64,

    /// Monte Carlo projections
    #[arg(short = 'L', long = "L", default_value_t = 100)]
    projections: usize,

    /// Projection dimension for prw/cprw
    #[arg(short, long, default_value_t = 2)]
    k: usize,

    /// Ascent steps for max/prw methods
    #[arg(long, default_value_t = 100)]
    steps: usize,

    /// Ascent learning rate
    #[arg(long, default_value_t = 0.01)]
    lr: f64,

    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl MethodFlags {
    fn spec(&self, seed: u64) -> Result<MethodSpec> {
        let method = match self.method {
            CliMethod::Estimator(m) => m,
            // the exact oracle reuses the spec shell for reporting
            CliMethod::Exact => Method::Sw,
        };
        Ok(MethodSpec {
            method,
            p: self.p,
            projections: self.projections,
            k: self.k,
            steps: self.steps,
            learning_rate: self.lr,
            seed,
        })
    }
}

#[derive(Debug, Parser)]
#[command(name = "csw", version, about = "Sliced Wasserstein distances with convolution slicers")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (default: all cores); CSW_THREADS overrides
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write output here instead of stdout
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Output format (default: csv for compare, json elsewhere,
    /// text for slicer-info)
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Distance matrix between class-conditional measures of a labeled dataset
    Compare {
        /// IDX image file
        #[arg(long)]
        images: PathBuf,
        /// IDX label file
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        method: MethodFlags,
        /// Supports sampled per class (default: smallest class size)
        #[arg(long)]
        per_class: Option<usize>,
        /// Independent repeats; > 1 adds std-dev
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value = "unit")]
        normalization: Normalization,
    },
    /// Distance between two tensor (CSWT) files
    Distance {
        /// First measure
        #[arg(long)]
        a: PathBuf,
        /// Second measure
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        method: MethodFlags,
    },
    /// Inspect a slicer schedule: layers, parameter and MAC counts
    SlicerInfo {
        #[arg(long)]
        variant: SlicerVariant,
        #[arg(short, long, default_value_t = 1)]
        c: usize,
        #[arg(short, long)]
        d: usize,
        #[arg(short, long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = false)]
        nonlinear: bool,
    },
    /// Time estimators on synthetic Gaussian measures
    Bench {
        #[arg(short, long, default_value_t = 1)]
        c: usize,
        #[arg(short, long, default_value_t = 28)]
        d: usize,
        /// Supports per measure
        #[arg(short, long, default_value_t = 64)]
        n: usize,
        /// Comma-separated method list
        #[arg(long, value_delimiter = ',', default_value = "sw,csw-b,csw-s,csw-d")]
        methods: Vec<CliMethod>,
        #[arg(short = 'L', long = "L", default_value_t = 100)]
        projections: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

impl clap::ValueEnum for SlicerVariant {
    fn value_variants<'a>() -> &'a [Self] {
        &[SlicerVariant::Base, SlicerVariant::Stride, SlicerVariant::Dilation]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            SlicerVariant::Base => "base",
            SlicerVariant::Stride => "stride",
            SlicerVariant::Dilation => "dilation",
        }))
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        }),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn install_threads(threads: Option<usize>) -> Result<()> {
    let resolved = match std::env::var("CSW_THREADS") {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| {
            Error::InvalidArgument(format!("CSW_THREADS must be an integer, got '{v}'"))
        })?),
        Err(_) => threads,
    };
    if let Some(t) = resolved {
        if t == 0 {
            return Err(Error::InvalidArgument("thread count must be >= 1".into()));
        }
        // ignore AlreadyInitialized (e.g. repeated calls in-process)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    Ok(())
}

fn exact_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    let a = PointCloudK::new(mu.supports().iter().map(vectorize).collect())?;
    let b = PointCloudK::new(nu.supports().iter().map(vectorize).collect())?;
    exact_wasserstein_assignment(&a, &b, p)
}

fn evaluate(method: CliMethod, spec: &MethodSpec, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    match method {
        CliMethod::Estimator(_) => spec.evaluate(mu, nu),
        CliMethod::Exact => exact_distance(mu, nu, spec.p),
    }
}

fn cli_param_count(method: CliMethod, spec: &MethodSpec, c: usize, d: usize) -> Result<usize> {
    match method {
        CliMethod::Estimator(_) => spec.param_count(c, d),
        CliMethod::Exact => Ok(0),
    }
}

/// Builds the class-by-class distance matrix. Diagonal entries compare
/// disjoint same-class halves; off-diagonal entries compare full
/// selections. With `repeats > 1` each repeat reseeds via `fork` and the
/// report carries the mean and sample std-dev.
pub fn cmd_compare(
    ds: &LabeledDataset,
    method: CliMethod,
    flags_spec: MethodSpec,
    per_class: Option<usize>,
    repeats: usize,
    normalization: Normalization,
) -> Result<DistanceMatrixReport> {
    if repeats < 1 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    let start = Instant::now();
    let mut counts = std::collections::BTreeMap::new();
    for &l in ds.labels() {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let per_class = per_class.unwrap_or_else(|| *counts.values().min().expect("nonempty"));
    let splits = split_by_class(ds, per_class, flags_spec.seed)?;
    let labels: Vec<u8> = splits.iter().map(|s| s.label).collect();
    let n = splits.len();
    let base = RandomSource::new(flags_spec.seed);

    let mut runs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(repeats);
    for rep in 0..repeats {
        let seed = if rep == 0 { flags_spec.seed } else { base.fork(rep as u64).master_seed() };
        let spec = MethodSpec { seed, ..flags_spec };
        let mut matrix = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    evaluate(method, &spec, &splits[i].half_a, &splits[i].half_b)?
                } else {
                    evaluate(method, &spec, &splits[i].full, &splits[j].full)?
                };
                matrix[i][j] = v;
                matrix[j][i] = v;
            }
        }
        runs.push(matrix);
    }

    let mean = |i: usize, j: usize| runs.iter().map(|m| m[i][j]).sum::<f64>() / repeats as f64;
    let matrix: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| mean(i, j)).collect()).collect();
    let std_dev = if repeats > 1 {
        Some(
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            let m = matrix[i][j];
                            let ss: f64 = runs.iter().map(|r| (r[i][j] - m).powi(2)).sum();
                            (ss / (repeats - 1) as f64).sqrt()
                        })
                        .collect()
                })
                .collect(),
        )
    } else {
        None
    };

    let param_count = cli_param_count(method, &flags_spec, ds.images()[0].channels(), ds.images()[0].dim())?;
    let mut report = DistanceMatrixReport::new(
        &flags_spec,
        normalization,
        param_count,
        start.elapsed().as_millis() as u64,
        labels,
        matrix,
        std_dev,
    )?;
    report.method = method.to_string();
    Ok(report)
}

/// Distance between two stored measures.
pub fn cmd_distance(
    a_path: &Path,
    b_path: &Path,
    method: CliMethod,
    spec: MethodSpec,
) -> Result<DistanceResult> {
    let mu = read_tensor_file(a_path)?;
    let nu = read_tensor_file(b_path)?;
    let start = Instant::now();
    let value = evaluate(method, &spec, &mu, &nu)?;
    let param_count = cli_param_count(method, &spec, mu.channels(), mu.dim())?;
    let (variant, nonlinear) = match method {
        CliMethod::Estimator(m) => (m.variant().map(|v| v.to_string()), m.nonlinear()),
        CliMethod::Exact => (None, false),
    };
    Ok(DistanceResult {
        method: method.to_string(),
        variant,
        nonlinear,
        p: spec.p,
        projections: spec.projections,
        k: spec.k,
        steps: spec.steps,
        lr: spec.learning_rate,
        seed: spec.seed,
        param_count,
        runtime_ms: start.elapsed().as_millis() as u64,
        value,
    })
}

/// JSON-serializable schedule dump.
#[derive(Debug, Serialize)]
pub struct SlicerInfo {
    pub variant: String,
    pub nonlinear: bool,
    pub channels: usize,
    pub input_dim: usize,
    pub k: usize,
    pub layers: Vec<SlicerInfoLayer>,
    pub param_count: usize,
    pub mac_count: usize,
}

#[derive(Debug, Serialize)]
pub struct SlicerInfoLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub sigmoid: bool,
    pub output_dim: usize,
}

/// Collects per-layer shapes and cost counts for a schedule.
pub fn cmd_slicer_info(
    variant: SlicerVariant,
    c: usize,
    d: usize,
    k: usize,
    nonlinear: bool,
) -> Result<SlicerInfo> {
    let schedule = SlicerSchedule::new(variant, c, d, k, nonlinear)?;
    let dims = schedule.spatial_dims()?;
    let layers = schedule
        .layers()
        .iter()
        .zip(&dims)
        .map(|(l, &output_dim)| SlicerInfoLayer {
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            kernel: l.kernel,
            stride: l.stride,
            dilation: l.dilation,
            sigmoid: l.sigmoid,
            output_dim,
        })
        .collect();
    Ok(SlicerInfo {
        variant: variant.to_string(),
        nonlinear,
        channels: c,
        input_dim: d,
        k,
        layers,
        param_count: schedule.param_count(),
        mac_count: schedule.mac_count()?,
    })
}

impl SlicerInfo {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} slicer, {}x{}x{} -> R^{}{}\n",
            self.variant,
            self.channels,
            self.input_dim,
            self.input_dim,
            self.k,
            if self.nonlinear { ", sigmoid" } else { "" }
        );
        for (i, l) in self.layers.iter().enumerate() {
            out.push_str(&format!(
                "layer {}: {} -> {} channels, kernel {}x{}, stride {}, dilation {}{} -> {}x{}\n",
                i + 1,
                l.in_channels,
                l.out_channels,
                l.kernel,
                l.kernel,
                l.stride,
                l.dilation,
                if l.sigmoid { ", sigmoid" } else { "" },
                l.output_dim,
                l.output_dim
            ));
        }
        out.push_str(&format!("params: {}\nmacs: {}\n", self.param_count, self.mac_count));
        out
    }
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub param_count: usize,
    pub mac_count: Option<usize>,
    pub runtime_ms: u64,
    pub value: f64,
}

fn method_mac_count(method: CliMethod, c: usize, d: usize, k: usize) -> Result<Option<usize>> {
    let m = match method {
        CliMethod::Estimator(m) => m,
        CliMethod::Exact => return Ok(None),
    };
    let count = match m {
        Method::Sw | Method::MaxSw => c * d * d,
        Method::Prw => c * d * d * k,
        Method::Csw { variant, .. } | Method::MaxCsw { variant } => {
            SlicerSchedule::new(variant, c, d, 1, false)?.mac_count()?
        }
        Method::Cprw { variant } => make_k_schedule(variant, c, d, k)?.mac_count()?,
    };
    Ok(Some(count))
}

/// Times each method once on a fixed pair of synthetic Gaussian measures.
pub fn cmd_bench(
    c: usize,
    d: usize,
    n: usize,
    methods: &[CliMethod],
    projections: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let src = RandomSource::new(seed);
    let draw = |stream: u64| -> Result<EmpiricalMeasure> {
        let mut rng = src.substream(stream);
        let supports = (0..n)
            .map(|_| crate::rng::sample_unit_tensor(c, d, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        EmpiricalMeasure::new(supports)
    };
    let mu = draw(u64::MAX)?;
    let nu = draw(u64::MAX - 1)?;
    methods
        .iter()
        .map(|&method| {
            let mut spec = match method {
                CliMethod::Estimator(m) => MethodSpec::new(m),
                CliMethod::Exact => MethodSpec::new(Method::Sw),
            };
            spec.projections = projections;
            spec.seed = seed;
            let start = Instant::now();
            let value = evaluate(method, &spec, &mu, &nu)?;
            Ok(BenchRow {
                method: method.to_string(),
                param_count: cli_param_count(method, &spec, c, d)?,
                mac_count: method_mac_count(method, c, d, spec.k)?,
                runtime_ms: start.elapsed().as_millis() as u64,
                value,
            })
        })
        .collect()
}

fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("method,param_count,mac_count,runtime_ms,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.16e}\n",
            r.method,
            r.param_count,
            r.mac_count.map_or(String::new(), |m| m.to_string()),
            r.runtime_ms,
            r.value
        ));
    }
    out
}

fn execute(cli: Cli) -> Result<()> {
    install_threads(cli.threads)?;
    let out = cli.out.as_deref();
    match cli.command {
        Command::Compare { images, labels, method, per_class, repeats, normalization } => {
            let ds = LabeledDataset::from_idx(&images, &labels, normalization)?;
            let spec = method.spec(method.seed)?;
            let report = cmd_compare(&ds, method.method, spec, per_class, repeats, normalization)?;
            let content = match cli.format.unwrap_or(OutputFormat::Csv) {
                OutputFormat::Csv => report.to_csv(),
                OutputFormat::Json => report.to_json(),
            };
            emit(out, &content)
        }
        Command::Distance { a, b, method } => {
            let spec = method.spec(method.seed)?;
            let result = cmd_distance(&a, &b, method.method, spec)?;
            emit(out, &serde_json::to_string_pretty(&result).expect("result serializes"))
        }
        Command::SlicerInfo { variant, c, d, k, nonlinear } => {
            let info = cmd_slicer_info(variant, c, d, k, nonlinear)?;
            let content = match cli.format {
                Some(OutputFormat::Json) => serde_json::to_string_pretty(&info).expect("info serializes"),
                _ => info.to_text(),
            };
            emit(out, &content)
        }
        Command::Bench { c, d, n, methods, projections, seed } => {
            let rows = cmd_bench(c, d, n, &methods, projections, seed)?;
            let content = match cli.format.unwrap_or(OutputFormat::Json) {
                OutputFormat::Csv => bench_csv(&rows),
                OutputFormat::Json => serde_json::to_string_pretty(&rows).expect("rows serialize"),
            };
            emit(out, &content)
        }
    }
}

/// Parses arguments and runs; usage errors exit 2 via the parser,
/// runtime errors print a JSON object to stderr and exit 1.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "code": 1, "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}
