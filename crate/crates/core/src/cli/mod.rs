//! Command-line front end: `check`, `solve`, `validate` and `converge`.
//!
//! Exit codes: 0 success or admissible, 1 domain failure (inadmissible
//! stepsizes, threshold breach, failed solve), 2 usage or parse error.

pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bench::{convergence_study, error_report, ErrorReport, Refinement, RefinementTable};
use crate::csv::{fmt_num, render};
use crate::ensemble::{run_ensemble, EnsembleStats, Sampler, SchemeConfig};
use crate::error::Error;
use crate::etdsolver::{StepSizeReport, TimeMesh};
use crate::specmat::Grid1D;
use config::ConfigFile;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FKPP_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "fkpp-out";
/// Default acceptance threshold of `validate` on mean and std errors.
pub const DEFAULT_THRESHOLD: f64 = 2e-3;

#[derive(Debug, Parser)]
#[command(name = "fkpp", version, about = "Random Fisher-KPP solver with exponential time differencing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report stepsize admissibility; exits 0 iff admissible.
    Check(CommonArgs),
    /// Solve the ensemble and write mean/std surfaces.
    Solve(SolveArgs),
    /// Compare against the exact statistics of the reference problem.
    Validate(ValidateArgs),
    /// Refinement study on the reference problem.
    Converge(ConvergeArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo sample count; switches to Monte Carlo sampling.
    #[arg(long)]
    samples: Option<u64>,
    /// Solve even when the stepsize gate fails.
    #[arg(long)]
    allow_inadmissible: bool,
    /// Worker threads for the ensemble.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory [default: config output.dir, then $FKPP_OUT_DIR, then ./fkpp-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory [default: config output.dir, then $FKPP_OUT_DIR, then ./fkpp-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Maximum allowed absolute error of mean and std at the final time.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StudyKind {
    Temporal,
    Spatial,
    Both,
}

#[derive(Debug, Args)]
struct ConvergeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output directory [default: config output.dir, then $FKPP_OUT_DIR, then ./fkpp-out]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Number of refinement levels, including the base configuration.
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Which stepsizes to refine: k alone, or h with k scaled by h^2.
    #[arg(long, value_enum, default_value_t = StudyKind::Both)]
    kind: StudyKind,
}

/// Failure of a command, mapped onto the exit code contract.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Json(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Domain(other.to_string()),
        }
    }
}

type CmdResult = std::result::Result<i32, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Check(a) => cmd_check(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Converge(a) => cmd_converge(&a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Everything resolved from the config file and flags.
struct Setup {
    file: ConfigFile,
    model: crate::randmodel::Model,
    scheme: SchemeConfig,
    report: StepSizeReport,
}

fn setup(args: &CommonArgs) -> std::result::Result<Setup, Failure> {
    let file = ConfigFile::load(&args.config).map_err(|e| match e {
        Error::Io(io) => Failure::Usage(format!("{}: {io}", args.config.display())),
        other => Failure::Usage(format!("{}: {other}", args.config.display())),
    })?;
    // Malformed grid or time sections are configuration errors (exit 2).
    file.grid().map_err(|e| Failure::Usage(e.to_string()))?;
    file.mesh().map_err(|e| Failure::Usage(e.to_string()))?;
    let model = file.model()?;
    let mut scheme = file.scheme(&model)?;
    if let Some(n) = args.samples {
        let seed = match scheme.sampler {
            Sampler::MonteCarlo { seed, .. } => seed,
            Sampler::Collocation { .. } => 0,
        };
        scheme.sampler = Sampler::MonteCarlo { n_samples: n, seed };
    }
    if let Some(seed) = args.seed {
        if let Sampler::MonteCarlo { n_samples, .. } = scheme.sampler {
            scheme.sampler = Sampler::MonteCarlo { n_samples, seed };
        }
    }
    if args.threads.is_some() {
        scheme.threads = args.threads;
    }
    scheme.allow_inadmissible = args.allow_inadmissible;
    let report = scheme.gate(&model)?;
    Ok(Setup {
        file,
        model,
        scheme,
        report,
    })
}

fn print_report(report: &StepSizeReport) {
    let b = &report.bounds;
    println!(
        "bounds: d1 = {}, d2 = {}, b1 = {}, a1 = {}, a2 = {}",
        fmt_num(b.d1),
        fmt_num(b.d2),
        fmt_num(b.b1),
        fmt_num(b.a1),
        fmt_num(b.a2)
    );
    println!("h = {}  h_max = {}", fmt_num(report.h_used), fmt_num(report.h_max));
    println!("k = {}  k_max = {}", fmt_num(report.k_used), fmt_num(report.k_max));
    println!("admissible: {}", report.admissible);
    for note in &report.notes {
        println!("note: {note}");
    }
}

fn cmd_check(args: &CommonArgs) -> CmdResult {
    let s = setup(args)?;
    print_report(&s.report);
    Ok(if s.report.admissible { 0 } else { 1 })
}

fn require_admissible(s: &Setup) -> std::result::Result<(), Failure> {
    if !s.report.admissible && !s.scheme.allow_inadmissible {
        print_report(&s.report);
        return Err(Failure::Domain(
            "stepsizes are inadmissible; pass --allow-inadmissible to solve anyway".into(),
        ));
    }
    if !s.report.admissible {
        eprintln!("warning: solving with inadmissible stepsizes; positivity is not guaranteed");
    }
    Ok(())
}

fn out_dir(flag: &Option<PathBuf>, file: &ConfigFile) -> PathBuf {
    flag.clone()
        .or_else(|| file.output.dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn write(dir: &Path, name: &str, contents: &str) -> std::result::Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Domain(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

/// Reproduction record written next to every set of data files.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a ConfigFile,
    pub grid: Grid1D,
    pub mesh: TimeMesh,
    pub sampler: Sampler,
    pub sampling_method: String,
    pub master_seed: Option<u64>,
    pub allow_inadmissible: bool,
    pub stepsize_report: &'a StepSizeReport,
    pub files: Vec<String>,
    pub timings_seconds: Vec<(String, f64)>,
}

fn manifest<'a>(s: &'a Setup, command: &'static str, files: Vec<String>, timings: Vec<(String, f64)>) -> RunManifest<'a> {
    RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: &s.file,
        grid: s.scheme.grid,
        mesh: s.scheme.mesh,
        sampler: s.scheme.sampler,
        sampling_method: s.scheme.sampler.describe(),
        master_seed: match s.scheme.sampler {
            Sampler::MonteCarlo { seed, .. } => Some(seed),
            Sampler::Collocation { .. } => None,
        },
        allow_inadmissible: s.scheme.allow_inadmissible,
        stepsize_report: &s.report,
        files,
        timings_seconds: timings,
    }
}

fn write_manifest(dir: &Path, m: &RunManifest<'_>) -> std::result::Result<(), Failure> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Failure::Domain(e.to_string()))?;
    write(dir, "manifest.json", &(text + "\n"))
}

/// `mean.csv` (x, t, mean[, mc_standard_error]) and `std.csv` (x, t, std),
/// rows ordered by time level, then node.
pub fn surface_csvs(stats: &EnsembleStats, grid: &Grid1D, mesh: &TimeMesh) -> (String, String) {
    let levels = mesh.n_steps() + 1;
    let coords = || (0..levels).flat_map(|n| (0..grid.dim()).map(move |i| (i, n)));
    let mean = match &stats.mc_standard_error {
        Some(se) => render(
            &["x", "t", "mean", "mc_standard_error"],
            coords().map(|(i, n)| vec![grid.node(i), mesh.level(n), stats.mean.get(i, n), se.get(i, n)]),
        ),
        None => render(
            &["x", "t", "mean"],
            coords().map(|(i, n)| vec![grid.node(i), mesh.level(n), stats.mean.get(i, n)]),
        ),
    };
    let std = render(
        &["x", "t", "std"],
        coords().map(|(i, n)| vec![grid.node(i), mesh.level(n), stats.std.get(i, n)]),
    );
    (mean, std)
}

fn cmd_solve(args: &SolveArgs) -> CmdResult {
    let s = setup(&args.common)?;
    require_admissible(&s)?;
    let dir = out_dir(&args.out_dir, &s.file);
    let start = Instant::now();
    let stats = run_ensemble(&s.model, &s.scheme)?;
    let solve_time = start.elapsed().as_secs_f64();
    let (mean, std) = surface_csvs(&stats, &s.scheme.grid, &s.scheme.mesh);
    write(&dir, "mean.csv", &mean)?;
    write(&dir, "std.csv", &std)?;
    let m = manifest(
        &s,
        "solve",
        vec!["mean.csv".into(), "std.csv".into()],
        vec![("ensemble".into(), solve_time)],
    );
    write_manifest(&dir, &m)?;
    println!(
        "solved {} realizations with {}; wrote {}",
        stats.count,
        s.scheme.sampler.describe(),
        dir.display()
    );
    Ok(0)
}

fn error_csv(report: &ErrorReport) -> String {
    render(
        &["x", "exact_mean", "numeric_mean", "abs_err_mean", "exact_std", "numeric_std", "abs_err_std"],
        (0..report.x.len()).map(|i| {
            vec![
                report.x[i],
                report.exact_mean[i],
                report.numeric_mean[i],
                report.mean_error[i],
                report.exact_std[i],
                report.numeric_std[i],
                report.std_error[i],
            ]
        }),
    )
}

fn cmd_validate(args: &ValidateArgs) -> CmdResult {
    let s = setup(&args.common)?;
    let problem = s.file.test_problem().ok_or_else(|| {
        Failure::Usage("validate needs the built-in reference model (\"name\": \"paper_sec5\")".into())
    })?;
    require_admissible(&s)?;
    let dir = out_dir(&args.out_dir, &s.file);
    let start = Instant::now();
    let stats = run_ensemble(&s.model, &s.scheme)?;
    let solve_time = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let report = error_report(&stats, &problem, &s.scheme)?;
    let exact_time = start.elapsed().as_secs_f64();
    write(&dir, "errors.csv", &error_csv(&report))?;
    let m = manifest(
        &s,
        "validate",
        vec!["errors.csv".into()],
        vec![("ensemble".into(), solve_time), ("exact_statistics".into(), exact_time)],
    );
    write_manifest(&dir, &m)?;
    let pass = report.within(args.threshold, args.threshold);
    println!(
        "t = {}: max |mean error| = {}, max |std error| = {}, threshold = {} -> {}",
        fmt_num(report.t),
        fmt_num(report.max_mean_error),
        fmt_num(report.max_std_error),
        fmt_num(args.threshold),
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { 0 } else { 1 })
}

/// Refinement table with columns h, k, max_err_mean, observed_order; the
/// order cell of the first row is empty.
pub fn refinement_csv(table: &RefinementTable) -> String {
    let mut out = String::from("h,k,max_err_mean,observed_order\n");
    for row in &table.rows {
        let order = row.observed_order.map(fmt_num).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_num(row.h),
            fmt_num(row.k),
            fmt_num(row.max_err_mean),
            order
        ));
    }
    out
}

fn cmd_converge(args: &ConvergeArgs) -> CmdResult {
    let s = setup(&args.common)?;
    let problem = s.file.test_problem().ok_or_else(|| {
        Failure::Usage("converge needs the built-in reference model (\"name\": \"paper_sec5\")".into())
    })?;
    require_admissible(&s)?;
    if args.levels == 0 {
        return Err(Failure::Usage("--levels must be at least 1".into()));
    }
    let dir = out_dir(&args.out_dir, &s.file);
    let kinds: &[Refinement] = match args.kind {
        StudyKind::Temporal => &[Refinement::Temporal],
        StudyKind::Spatial => &[Refinement::Spatial],
        StudyKind::Both => &[Refinement::Temporal, Refinement::Spatial],
    };
    let mut files = Vec::new();
    let mut timings = Vec::new();
    for &kind in kinds {
        let start = Instant::now();
        let table = convergence_study(&problem, &s.scheme, args.levels, kind)?;
        let name = match kind {
            Refinement::Temporal => "convergence_temporal.csv",
            Refinement::Spatial => "convergence_spatial.csv",
        };
        write(&dir, name, &refinement_csv(&table))?;
        files.push(name.to_string());
        timings.push((name.to_string(), start.elapsed().as_secs_f64()));
        println!("{kind:?} refinement:");
        for row in &table.rows {
            println!(
                "  h = {:<10} k = {:<12} max err = {:<18} order = {}",
                fmt_num(row.h),
                fmt_num(row.k),
                fmt_num(row.max_err_mean),
                row.observed_order.map(fmt_num).unwrap_or_else(|| "-".into())
            );
        }
    }
    write_manifest(&dir, &manifest(&s, "converge", files, timings))?;
    Ok(0)
}
