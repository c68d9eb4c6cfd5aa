//! Command-line frontend.
//!
//! Exit codes: 0 success, 1 usage/configuration/input error, 2 failure of the
//! program under test or its adapter, 3 the analysis found nothing.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::derivative::{pdq, DerivativeError};
use crate::distance::{ncd_bytes, Compressor, CompressorKind, DistanceError, DistanceFn};
use crate::explore::{
    grid_scan, heatgrid_diff, search_many, ExploreError, GridScanConfig, HeatGrid, SearchConfig,
    MAJOR_BOUNDARY_FLOOR,
};
use crate::report::{
    self, export_grid_csv, export_grid_image, export_pairs_json, PairsReport, ReportError,
};
use crate::sut::{
    builtin, Concurrency, OutputDecoding, SlotDomain, SubprocessSpec, SubprocessSut, Sut, SutError,
    BUILTIN_NAMES,
};
use crate::values::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SUT: i32 = 2;
pub const EXIT_NOTHING_FOUND: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Sut(String),
    NothingFound(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Sut(_) => EXIT_SUT,
            CliError::NothingFound(_) => EXIT_NOTHING_FOUND,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Sut(m) | CliError::NothingFound(m) => m,
        }
    }
}

impl From<SutError> for CliError {
    fn from(e: SutError) -> Self {
        match e {
            SutError::BadSpec(_) | SutError::Arity { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Sut(e.to_string()),
        }
    }
}

impl From<DistanceError> for CliError {
    fn from(e: DistanceError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<DerivativeError> for CliError {
    fn from(e: DerivativeError) -> Self {
        match e {
            DerivativeError::Sut(s) => s.into(),
            DerivativeError::NoNeighbor => CliError::NothingFound(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<ExploreError> for CliError {
    fn from(e: ExploreError) -> Self {
        match e {
            ExploreError::Derivative(d) => d.into(),
            ExploreError::Sut(s) => s.into(),
            ExploreError::NoBoundaryFound { .. } => CliError::NothingFound(e.to_string()),
            ExploreError::Pool(_) => CliError::Sut(e.to_string()),
            ExploreError::Config(_) | ExploreError::GeometryMismatch(_) => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "bva",
    version,
    about = "Boundary value exploration with program derivatives"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalized compression distance of two files (or strings with --text).
    Ncd(NcdArgs),
    /// Difference quotient of a program over one input pair.
    Pdq(PdqArgs),
    /// Sampled derivative heatmap over a 2D grid; writes <out>.csv and <out>.pgm.
    Scan(ScanArgs),
    /// Cell-wise difference of two heatmap CSV files.
    Diff(DiffArgs),
    /// Seeded searches for input pairs straddling a boundary; writes JSON.
    Search(SearchArgs),
    /// Scan both builtin programs, diff them and search, into one directory.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Compressor backing NCD (zlib or deflate).
    #[arg(long)]
    pub compressor: Option<String>,
    /// Compression level 0-9.
    #[arg(long, env = "BVA_LEVEL")]
    pub level: Option<u32>,
    /// Seed: a number, or `random` to draw one from the OS.
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Leave timestamps out of written files.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Decode {
    Plain,
    Canonical,
}

#[derive(Debug, Clone, Args)]
pub struct SutArgs {
    /// Builtin program: sum1, sum2 or const.
    #[arg(long, conflicts_with = "exec")]
    pub sut: Option<String>,
    /// External executable; reads one input line on stdin, answers on stdout.
    #[arg(long)]
    pub exec: Option<PathBuf>,
    /// Argument passed to the executable (repeatable).
    #[arg(long = "exec-arg", allow_hyphen_values = true)]
    pub exec_args: Vec<String>,
    /// Per-call timeout for the executable.
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// How the executable's output is read.
    #[arg(long, value_enum)]
    pub decode: Option<Decode>,
    /// The executable must not run concurrently with itself.
    #[arg(long)]
    pub serial: bool,
    /// Cap on concurrently running children.
    #[arg(long)]
    pub max_children: Option<usize>,
    /// Real input slot LO:HI (repeatable); defaults to two slots -2:8.
    #[arg(long = "domain", allow_hyphen_values = true)]
    pub domains: Vec<String>,
}

#[derive(Debug, Args)]
pub struct NcdArgs {
    pub a: String,
    pub b: String,
    /// Treat the arguments as literal strings instead of file paths.
    #[arg(long)]
    pub text: bool,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistanceName {
    Ncd,
    Abs,
    Euclid,
}

#[derive(Debug, Args)]
pub struct PdqArgs {
    /// First input: comma-separated numbers or a canonical value.
    #[arg(allow_hyphen_values = true)]
    pub a: String,
    /// Second input.
    #[arg(allow_hyphen_values = true)]
    pub b: String,
    #[arg(long, value_enum, default_value = "ncd")]
    pub d_in: DistanceName,
    #[arg(long, value_enum, default_value = "ncd")]
    pub d_out: DistanceName,
    #[command(flatten)]
    pub sut: SutArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// X range LO:HI.
    #[arg(long, allow_hyphen_values = true)]
    pub x_range: Option<String>,
    /// Y range LO:HI.
    #[arg(long, allow_hyphen_values = true)]
    pub y_range: Option<String>,
    /// Cells per axis.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Neighbours sampled per cell.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Sampling half-width (default: half a cell).
    #[arg(long)]
    pub radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Output prefix; writes <out>.csv and <out>.pgm.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub sut: SutArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Write the cell-wise differences as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SearchFlags {
    /// Independent searches, with seeds derived from --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Evaluated pairs per search.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub initial_step: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub shrink_weight: Option<f64>,
    #[arg(long)]
    pub restart_after: Option<usize>,
    /// Output distance a straddle needs to count as a major boundary.
    #[arg(long)]
    pub major_floor: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchFlags,
    #[command(flatten)]
    pub sut: SutArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Parent directory of the run directory.
    #[arg(long, default_value = "bva-demo")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub search: SearchFlags,
    #[command(flatten)]
    pub common: CommonArgs,
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub sut: Option<String>,
    pub compressor: Option<String>,
    pub level: Option<u32>,
    pub seed: Option<toml::Value>,
    pub jobs: Option<usize>,
    pub no_timestamp: Option<bool>,
    #[serde(default)]
    pub scan: ScanFileConfig,
    #[serde(default)]
    pub search: SearchFileConfig,
    #[serde(default)]
    pub exec: ExecFileConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanFileConfig {
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    pub resolution: Option<usize>,
    pub samples: Option<usize>,
    pub radius: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchFileConfig {
    pub seeds: Option<usize>,
    pub budget: Option<usize>,
    pub initial_step: Option<f64>,
    pub decay: Option<f64>,
    pub floor: Option<f64>,
    pub shrink_weight: Option<f64>,
    pub restart_after: Option<usize>,
    pub major_floor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecFileConfig {
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub args: Vec<String>,
    pub timeout_ms: Option<u64>,
    pub decode: Option<String>,
    pub serial: Option<bool>,
    pub max_children: Option<usize>,
    pub domains: Option<Vec<(f64, f64)>>,
}

fn load_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// Settings shared by all commands after merging flags over the config file.
struct Settings {
    compressor: Compressor,
    seed: u64,
    jobs: usize,
    timestamp: Option<u64>,
}

fn settings(common: &CommonArgs, file: &FileConfig) -> CliResult<Settings> {
    let kind: CompressorKind = common
        .compressor
        .as_deref()
        .or(file.compressor.as_deref())
        .unwrap_or("zlib")
        .parse()?;
    let level = common
        .level
        .or(file.level)
        .unwrap_or(crate::distance::DEFAULT_LEVEL);
    let compressor = Compressor::new(kind, level)?;
    let seed_text = match (&common.seed, &file.seed) {
        (Some(s), _) => Some(s.clone()),
        (None, Some(toml::Value::Integer(n))) => Some(n.to_string()),
        (None, Some(toml::Value::String(s))) => Some(s.clone()),
        (None, Some(other)) => return Err(CliError::Usage(format!("bad seed {other}"))),
        (None, None) => None,
    };
    let seed = match seed_text.as_deref() {
        None => crate::DEFAULT_SEED,
        Some("random") => {
            let s: u64 = rand::random();
            eprintln!("seed: {s}");
            s
        }
        Some(s) => s.parse().map_err(|_| {
            CliError::Usage(format!("seed must be a number or `random`, got {s:?}"))
        })?,
    };
    let jobs = common
        .jobs
        .or(file.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(CliError::Usage("jobs must be >= 1".into()));
    }
    let no_timestamp = common.no_timestamp || file.no_timestamp.unwrap_or(false);
    Ok(Settings {
        compressor,
        seed,
        jobs,
        timestamp: (!no_timestamp).then(report::now_timestamp),
    })
}

fn parse_pair(s: &str, what: &str) -> CliResult<(f64, f64)> {
    let bad = || CliError::Usage(format!("{what} must look like LO:HI, got {s:?}"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

fn make_sut(args: &SutArgs, file: &FileConfig) -> CliResult<Arc<dyn Sut>> {
    let exec = args.exec.clone().or_else(|| {
        if args.sut.is_some() {
            None
        } else {
            file.exec.path.clone()
        }
    });
    if let Some(path) = exec {
        let domains = if !args.domains.is_empty() {
            args.domains
                .iter()
                .map(|d| parse_pair(d, "--domain"))
                .collect::<CliResult<Vec<_>>>()?
        } else {
            file.exec
                .domains
                .clone()
                .unwrap_or_else(|| vec![(-2.0, 8.0); 2])
        };
        let mut spec = SubprocessSpec::new(
            path,
            domains
                .into_iter()
                .map(|(lo, hi)| SlotDomain::Real { lo, hi })
                .collect(),
        );
        spec.args = if args.exec_args.is_empty() {
            file.exec.args.clone()
        } else {
            args.exec_args.clone()
        };
        if let Some(t) = args.timeout_ms.or(file.exec.timeout_ms) {
            spec.timeout_ms = t;
        }
        spec.decoding = match (args.decode, file.exec.decode.as_deref()) {
            (Some(Decode::Canonical), _) | (None, Some("canonical")) => OutputDecoding::Canonical,
            (Some(Decode::Plain), _) | (None, Some("plain")) | (None, None) => {
                OutputDecoding::Plain
            }
            (None, Some(other)) => {
                return Err(CliError::Usage(format!("unknown decoding {other:?}")))
            }
        };
        if args.serial || file.exec.serial.unwrap_or(false) {
            spec.concurrency = Concurrency::SerialOnly;
        }
        if let Some(m) = args.max_children.or(file.exec.max_children) {
            spec.max_children = m;
        }
        return Ok(Arc::new(SubprocessSut::new(spec)?));
    }
    let name = args.sut.as_deref().or(file.sut.as_deref()).ok_or_else(|| {
        CliError::Usage(format!(
            "choose a program with --sut ({}) or --exec PATH",
            BUILTIN_NAMES.join(", ")
        ))
    })?;
    builtin(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown program {name:?}; builtin programs are {}",
            BUILTIN_NAMES.join(", ")
        ))
    })
}

fn grid_config(args: &GridArgs, file: &FileConfig, s: &Settings) -> CliResult<GridScanConfig> {
    let d = GridScanConfig::default();
    let range =
        |flag: &Option<String>, cfg: Option<(f64, f64)>, def, what| -> CliResult<(f64, f64)> {
            match flag {
                Some(t) => parse_pair(t, what),
                None => Ok(cfg.unwrap_or(def)),
            }
        };
    let cfg = GridScanConfig {
        x_range: range(&args.x_range, file.scan.x_range, d.x_range, "--x-range")?,
        y_range: range(&args.y_range, file.scan.y_range, d.y_range, "--y-range")?,
        resolution: args
            .resolution
            .or(file.scan.resolution)
            .unwrap_or(d.resolution),
        samples: args.samples.or(file.scan.samples).unwrap_or(d.samples),
        radius: args.radius.or(file.scan.radius),
        compressor: s.compressor,
        seed: s.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

struct SearchPlan {
    cfg: SearchConfig,
    runs: usize,
    major_floor: f64,
}

fn search_plan(
    args: &SearchFlags,
    file: &FileConfig,
    s: &Settings,
    default_runs: usize,
) -> CliResult<SearchPlan> {
    let d = SearchConfig::default();
    let f = &file.search;
    let cfg = SearchConfig {
        budget: args.budget.or(f.budget).unwrap_or(d.budget),
        initial_step: args
            .initial_step
            .or(f.initial_step)
            .unwrap_or(d.initial_step),
        decay: args.decay.or(f.decay).unwrap_or(d.decay),
        floor: args.floor.or(f.floor).unwrap_or(d.floor),
        shrink_weight: args
            .shrink_weight
            .or(f.shrink_weight)
            .unwrap_or(d.shrink_weight),
        restart_after: args
            .restart_after
            .or(f.restart_after)
            .unwrap_or(d.restart_after),
        seed: s.seed,
    };
    cfg.validate()?;
    let runs = args.seeds.or(f.seeds).unwrap_or(default_runs);
    if runs == 0 {
        return Err(CliError::Usage("--seeds must be >= 1".into()));
    }
    Ok(SearchPlan {
        cfg,
        runs,
        major_floor: args
            .major_floor
            .or(f.major_floor)
            .unwrap_or(MAJOR_BOUNDARY_FLOOR),
    })
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_ncd(args: &NcdArgs) -> CliResult<String> {
    let file = load_config(args.common.config.as_deref())?;
    let s = settings(&args.common, &file)?;
    let read = |p: &str| -> CliResult<Vec<u8>> {
        if args.text {
            Ok(p.as_bytes().to_vec())
        } else {
            fs::read(p).map_err(|e| CliError::Usage(format!("{p}: {e}")))
        }
    };
    let (a, b) = (read(&args.a)?, read(&args.b)?);
    Ok(format!(
        "{} ({})\n",
        ncd_bytes(&s.compressor, &a, &b),
        s.compressor
    ))
}

fn parse_input(s: &str, arity: usize) -> CliResult<Value> {
    if let Ok(v) = Value::parse_canonical(s) {
        return Ok(v);
    }
    let xs = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("cannot read input {s:?}")))?;
    let bad = |e: crate::values::ValueError| CliError::Usage(e.to_string());
    if xs.len() == 1 && arity == 1 {
        Value::real(xs[0]).map_err(bad)
    } else {
        Value::reals(&xs).map_err(bad)
    }
}

fn distance_fn(name: DistanceName, c: Compressor) -> DistanceFn {
    match name {
        DistanceName::Ncd => DistanceFn::Ncd(c),
        DistanceName::Abs => DistanceFn::AbsDiff,
        DistanceName::Euclid => DistanceFn::Euclidean,
    }
}

fn cmd_pdq(args: &PdqArgs) -> CliResult<String> {
    let file = load_config(args.common.config.as_deref())?;
    let s = settings(&args.common, &file)?;
    let sut = make_sut(&args.sut, &file)?;
    let a = parse_input(&args.a, sut.arity())?;
    let b = parse_input(&args.b, sut.arity())?;
    let q = pdq(
        sut.as_ref(),
        &distance_fn(args.d_out, s.compressor),
        &distance_fn(args.d_in, s.compressor),
        &a,
        &b,
    )?;
    let mut out = String::new();
    let _ = writeln!(out, "P({}) = {}", q.input_a, q.output_a);
    let _ = writeln!(out, "P({}) = {}", q.input_b, q.output_b);
    let _ = writeln!(out, "d_in {} = {}", q.d_in_name, q.d_in);
    let _ = writeln!(out, "d_out {} = {}", q.d_out_name, q.d_out);
    match q.quotient {
        Some(v) => {
            let _ = writeln!(out, "quotient = {v}");
        }
        None => out.push_str("quotient = undefined (inputs are equal)\n"),
    }
    Ok(out)
}

fn scan_summary(g: &HeatGrid) -> String {
    let mut out = format!("{}: ", g.provenance.sut);
    match g.max_cell() {
        Some((col, row, q)) => {
            let c = g.cell(col, row).center;
            let _ = write!(
                out,
                "max quotient {q} at cell ({col}, {row}) centred ({}, {})",
                c.0, c.1
            );
        }
        None => out.push_str("no defined cell"),
    }
    let _ = writeln!(out, "; undefined cells: {}", g.undefined_count());
    out
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_grid(g: &HeatGrid, prefix: &Path, ts: Option<u64>) -> CliResult<()> {
    export_grid_csv(g, &with_ext(prefix, "csv"), ts)?;
    export_grid_image(g, &with_ext(prefix, "pgm"), ts)?;
    Ok(())
}

fn cmd_scan(args: &ScanArgs) -> CliResult<String> {
    let file = load_config(args.common.config.as_deref())?;
    let s = settings(&args.common, &file)?;
    let cfg = grid_config(&args.grid, &file, &s)?;
    let sut = make_sut(&args.sut, &file)?;
    let g = grid_scan(sut.as_ref(), &cfg, s.jobs)?;
    write_grid(&g, &args.out, s.timestamp)?;
    Ok(scan_summary(&g))
}

fn diff_summary(d: &crate::explore::GridDiff) -> String {
    let positive = d.cells.iter().flatten().filter(|v| **v > 0.0).count();
    format!(
        "cells differing: {positive}; status mismatches: {}; max abs diff: {}; mean abs diff: {}\n",
        d.status_mismatches, d.max_abs, d.mean_abs
    )
}

fn cmd_diff(args: &DiffArgs) -> CliResult<String> {
    let file = load_config(args.common.config.as_deref())?;
    let s = settings(&args.common, &file)?;
    let g1 = report::read_grid_csv(&args.a)?.grid;
    let g2 = report::read_grid_csv(&args.b)?.grid;
    let d = heatgrid_diff(&g1, &g2)?;
    if let Some(out) = &args.out {
        fs::write(out, report::diff_csv(&d, &g1, &g2, s.timestamp))
            .map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    }
    Ok(diff_summary(&d))
}

fn run_search(sut: &dyn Sut, plan: &SearchPlan, s: &Settings) -> CliResult<PairsReport> {
    let results = search_many(
        sut,
        &plan.cfg,
        &s.compressor,
        plan.runs,
        plan.major_floor,
        s.jobs,
    )?;
    Ok(PairsReport::from_runs(
        sut.name(),
        &plan.cfg,
        &s.compressor,
        results,
        s.timestamp,
    )?)
}

fn search_summary(r: &PairsReport) -> String {
    let straddling = r
        .pairs
        .iter()
        .filter(|p| p.straddles_major_boundary)
        .count();
    let best = r
        .pairs
        .iter()
        .map(|p| p.quotient)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!(
        "{} searches: {} pairs found, {} straddle a major boundary, {} found nothing",
        r.provenance.seeds.len(),
        r.pairs.len(),
        straddling,
        r.not_found.len()
    );
    if !r.pairs.is_empty() {
        let _ = write!(out, "; best quotient {best}");
    }
    out.push('\n');
    out
}

fn cmd_search(args: &SearchArgs) -> CliResult<String> {
    let file = load_config(args.common.config.as_deref())?;
    let s = settings(&args.common, &file)?;
    let plan = search_plan(&args.search, &file, &s, 1)?;
    let sut = make_sut(&args.sut, &file)?;
    let r = run_search(sut.as_ref(), &plan, &s)?;
    let summary = search_summary(&r);
    let to_stdout = args.out.is_none();
    match &args.out {
        Some(path) => export_pairs_json(&r, path)?,
        None => print!("{}", report::pairs_json(&r)?),
    }
    if to_stdout || r.pairs.is_empty() {
        eprint!("{summary}");
    }
    if r.pairs.is_empty() {
        return Err(CliError::NothingFound(format!(
            "no boundary found within {} evaluations",
            plan.cfg.budget
        )));
    }
    Ok(if to_stdout { String::new() } else { summary })
}

fn cmd_demo(args: &DemoArgs) -> CliResult<String> {
    let file = load_config(args.common.config.as_deref())?;
    let s = settings(&args.common, &file)?;
    let cfg = grid_config(&args.grid, &file, &s)?;
    let plan = search_plan(&args.search, &file, &s, 20)?;
    let name = match s.timestamp {
        Some(t) => format!("run-{t}"),
        None => "demo".to_string(),
    };
    let dir = args.out_dir.join(name);
    if dir.exists() {
        let empty = fs::read_dir(&dir)
            .map(|mut it| it.next().is_none())
            .unwrap_or(false);
        if !empty {
            return Err(CliError::Usage(format!(
                "{} exists and is not empty",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;

    let mut summary = String::new();
    let mut grids = Vec::new();
    for (prog, prefix) in [("sum1", "g1"), ("sum2", "g2")] {
        let sut = builtin(prog).expect("builtin program");
        let g = grid_scan(sut.as_ref(), &cfg, s.jobs)?;
        write_grid(&g, &dir.join(prefix), s.timestamp)?;
        summary.push_str(&scan_summary(&g));
        grids.push(g);
    }
    let d = heatgrid_diff(&grids[0], &grids[1])?;
    let diff_path = dir.join("diff.csv");
    fs::write(
        &diff_path,
        report::diff_csv(&d, &grids[0], &grids[1], s.timestamp),
    )
    .map_err(|e| CliError::Usage(format!("{}: {e}", diff_path.display())))?;
    summary.push_str("sum1 vs sum2: ");
    summary.push_str(&diff_summary(&d));

    let r = run_search(
        builtin("sum1").expect("builtin program").as_ref(),
        &plan,
        &s,
    )?;
    export_pairs_json(&r, &dir.join("pairs.json"))?;
    summary.push_str(&search_summary(&r));
    let summary_path = dir.join("summary.txt");
    fs::write(&summary_path, &summary)
        .map_err(|e| CliError::Usage(format!("{}: {e}", summary_path.display())))?;
    let _ = writeln!(summary, "written to {}", dir.display());
    Ok(summary)
}

/// Parses `args` and runs the command, printing results. Returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Ncd(a) => cmd_ncd(a),
        Command::Pdq(a) => cmd_pdq(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Diff(a) => cmd_diff(a),
        Command::Search(a) => cmd_search(a),
        Command::Demo(a) => cmd_demo(a),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("bva: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
