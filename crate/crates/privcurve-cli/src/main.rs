//! Command-line front end: curve tabulation, mechanism construction and
//! export, sampling, Monte Carlo simulation, baseline comparison, and the
//! deterministic identity suite.
//!
//! Exit status: 0 on success / all checks passing, 1 on a validation error
//! (bad flags, malformed input), 2 on a verification failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use privcurve::curve::table_to_csv;
use privcurve::linmap::{parse_linear_map, svd_ascending, LinearMap};
use privcurve::mechanism::{build_mechanism, CoordinateMode, Mechanism};
use privcurve::montecarlo::{
    compare_mechanisms_with_shards, comparison_to_csv, simulate_with_shards, SimulationReport,
    SWEEP_CSV_HEADER,
};
use privcurve::rng::DEFAULT_SHARD_COUNT;
use privcurve::verify::run_identity_suite;

#[derive(Parser)]
#[command(
    name = "privcurve",
    version,
    about = "Exact privacy curves and optimal query responses for Gaussian data under linear-function recoverability"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the privacy curve pi(rho) (CSV) or export its description (JSON)
    Curve(CurveArgs),
    /// Build the optimal mechanism at a budget and export it as JSON
    Mechanism(MechanismArgs),
    /// Draw a reproducible joint sample batch from the mechanism
    Sample(SampleArgs),
    /// Estimate distortion and privacy by Monte Carlo and compare to the closed forms
    Simulate(SimulateArgs),
    /// Measure baseline mechanisms against the optimal one
    Compare(CompareArgs),
    /// Run the deterministic identity suite on a map
    Verify(VerifyArgs),
}

#[derive(Args)]
struct MatrixArgs {
    /// Path to the matrix JSON document {"m", "n", "entries", "b"?}
    #[arg(long, value_name = "PATH")]
    matrix: PathBuf,
    /// Rank tolerance for the factorization (0 = automatic)
    #[arg(long = "rank-tol", value_name = "T", default_value_t = 0.0)]
    rank_tol: f64,
}

#[derive(Args)]
struct OutArgs {
    /// Output path (standard output when omitted)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Bin,
}

#[derive(Args)]
struct RhoArgs {
    /// Recoverability budget rho
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    rho: Option<f64>,
    /// Budget sweep start:stop:count (count >= 2)
    #[arg(
        long = "rho-sweep",
        value_name = "A:B:K",
        conflicts_with = "rho",
        allow_hyphen_values = true
    )]
    rho_sweep: Option<String>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[command(flatten)]
    rho: RhoArgs,
    #[command(flatten)]
    out: OutArgs,
    /// csv = tabulated points, json = curve description
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct MechanismArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    /// Recoverability budget rho
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    rho: f64,
    /// Coordinate mode of the response
    #[arg(long, value_parser = parse_mode, default_value = "original")]
    mode: CoordinateMode,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    rho: f64,
    /// Number of joint draws
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_parser = parse_mode, default_value = "original")]
    mode: CoordinateMode,
    #[command(flatten)]
    out: OutArgs,
    /// csv = x/z columns, bin = PRIVBAT1 layout, json = full batch
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[command(flatten)]
    rho: RhoArgs,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, value_parser = parse_mode, default_value = "original")]
    mode: CoordinateMode,
    #[command(flatten)]
    out: OutArgs,
    /// json = full report(s), csv = one sweep row per budget
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long, value_name = "R", allow_hyphen_values = true)]
    rho: f64,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

fn parse_mode(s: &str) -> Result<CoordinateMode, String> {
    CoordinateMode::from_str(s)
}

/// A validation failure (exit status 1).
struct Invalid(String);

macro_rules! invalid_from {
    ($($ty:ty),* $(,)?) => {$(
        impl From<$ty> for Invalid {
            fn from(e: $ty) -> Self {
                Invalid(e.to_string())
            }
        }
    )*};
}

invalid_from!(
    privcurve::LinmapError,
    privcurve::CurveError,
    privcurve::allocation::AllocationError,
    privcurve::mechanism::MechanismError,
    privcurve::montecarlo::SimulationError,
);

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(Invalid(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, Invalid> {
    match cli.command {
        Command::Curve(args) => cmd_curve(args),
        Command::Mechanism(args) => cmd_mechanism(args),
        Command::Sample(args) => cmd_sample(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn load_map(args: &MatrixArgs) -> Result<LinearMap, Invalid> {
    let text = fs::read_to_string(&args.matrix)
        .map_err(|e| Invalid(format!("cannot read {}: {e}", args.matrix.display())))?;
    parse_linear_map(&text)
        .map_err(|e| Invalid(format!("{}: {e}", args.matrix.display())))
}

fn check_rho(rho: f64) -> Result<f64, Invalid> {
    if !(rho >= 0.0) {
        return Err(Invalid("rho must be nonnegative".into()));
    }
    if !rho.is_finite() {
        return Err(Invalid("rho must be finite".into()));
    }
    Ok(rho)
}

/// Parses `start:stop:count` into an inclusive linear grid.
fn parse_sweep(spec: &str) -> Result<Vec<f64>, Invalid> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Invalid(format!(
            "sweep {spec:?} must have the form start:stop:count"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|_| Invalid(format!("bad sweep start {:?}", parts[0])))?;
    let stop: f64 = parts[1]
        .parse()
        .map_err(|_| Invalid(format!("bad sweep stop {:?}", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| Invalid(format!("bad sweep count {:?}", parts[2])))?;
    check_rho(start)?;
    check_rho(stop)?;
    if start > stop {
        return Err(Invalid("sweep start must not exceed stop".into()));
    }
    if count < 2 {
        return Err(Invalid("sweep count must be >= 2".into()));
    }
    Ok((0..count)
        .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
        .collect())
}

fn shard_count() -> Result<usize, Invalid> {
    match std::env::var("PRIVCURVE_SHARDS") {
        Ok(value) => {
            let shards: usize = value
                .parse()
                .map_err(|_| Invalid(format!("PRIVCURVE_SHARDS={value:?} is not a count")))?;
            if shards == 0 {
                return Err(Invalid("PRIVCURVE_SHARDS must be >= 1".into()));
            }
            Ok(shards)
        }
        Err(_) => Ok(DEFAULT_SHARD_COUNT),
    }
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), Invalid> {
    match out {
        Some(path) => write_file(path, bytes),
        None => {
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Invalid(format!("cannot write to stdout: {e}")))?;
            Ok(())
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Invalid> {
    fs::write(path, bytes).map_err(|e| Invalid(format!("cannot write {}: {e}", path.display())))
}

fn cmd_curve(args: CurveArgs) -> Result<ExitCode, Invalid> {
    let map = load_map(&args.matrix)?;
    let svd = svd_ascending(&map, args.matrix.rank_tol)?;
    let curve = privcurve::build_curve(&svd, map.cols());
    let grid = match (&args.rho.rho, &args.rho.rho_sweep) {
        (Some(rho), None) => vec![check_rho(*rho)?],
        (None, Some(spec)) => parse_sweep(spec)?,
        (None, None) => Vec::new(), // breakpoints only
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    let output = match args.format {
        Format::Csv => table_to_csv(&curve.tabulate(&grid)?),
        Format::Json => {
            let mut s = curve.to_json_string();
            s.push('\n');
            s
        }
        Format::Bin => return Err(Invalid("curve output supports csv or json".into())),
    };
    emit(&args.out.out, output.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn build(args: &MatrixArgs, rho: f64, mode: CoordinateMode) -> Result<Mechanism, Invalid> {
    let map = load_map(args)?;
    Ok(build_mechanism(map, check_rho(rho)?, args.rank_tol, mode)?)
}

fn cmd_mechanism(args: MechanismArgs) -> Result<ExitCode, Invalid> {
    if args.format != Format::Json {
        return Err(Invalid("mechanism export is json".into()));
    }
    let mech = build(&args.matrix, args.rho, args.mode)?;
    let mut output = mech.to_json_string();
    output.push('\n');
    emit(&args.out.out, output.as_bytes())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(args: SampleArgs) -> Result<ExitCode, Invalid> {
    if args.trials == 0 {
        return Err(Invalid("trials must be >= 1".into()));
    }
    let mech = build(&args.matrix, args.rho, args.mode)?;
    let batch = mech.sample_joint_sharded(args.trials, args.seed, shard_count()?)?;
    match args.format {
        Format::Csv => {
            let mut buf = Vec::new();
            batch.write_csv(&mut buf).map_err(|e| Invalid(e.to_string()))?;
            emit(&args.out.out, &buf)?;
        }
        Format::Bin => {
            let mut buf = Vec::new();
            batch
                .write_binary(&mut buf)
                .map_err(|e| Invalid(e.to_string()))?;
            emit(&args.out.out, &buf)?;
        }
        Format::Json => {
            let rows_x: Vec<Vec<f64>> =
                (0..batch.count()).map(|i| batch.x_row(i).to_vec()).collect();
            let rows_z: Vec<Vec<f64>> =
                (0..batch.count()).map(|i| batch.z_row(i).to_vec()).collect();
            let doc = serde_json::json!({
                "count": batch.count(),
                "dim_x": batch.dim_x(),
                "dim_z": batch.dim_z(),
                "seed": batch.seed(),
                "shard_count": batch.shard_count(),
                "rng_id": batch.rng_id(),
                "x": rows_x,
                "z": rows_z,
            });
            let mut output =
                serde_json::to_string_pretty(&doc).map_err(|e| Invalid(e.to_string()))?;
            output.push('\n');
            emit(&args.out.out, output.as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode, Invalid> {
    if args.trials < 2 {
        return Err(Invalid("trials must be >= 2".into()));
    }
    let rhos = match (&args.rho.rho, &args.rho.rho_sweep) {
        (Some(rho), None) => vec![check_rho(*rho)?],
        (None, Some(spec)) => parse_sweep(spec)?,
        (None, None) => return Err(Invalid("one of --rho or --rho-sweep is required".into())),
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    let shards = shard_count()?;
    let map = load_map(&args.matrix)?;
    let mut reports: Vec<SimulationReport> = Vec::with_capacity(rhos.len());
    for rho in rhos {
        let mech = build_mechanism(map.clone(), rho, args.matrix.rank_tol, args.mode)?;
        reports.push(simulate_with_shards(&mech, args.trials, args.seed, shards)?);
    }
    let all_pass = reports.iter().all(|r| r.all_constraints_pass());
    let output = match args.format {
        Format::Csv => {
            let mut s = String::from(SWEEP_CSV_HEADER);
            s.push('\n');
            for report in &reports {
                s.push_str(&report.to_sweep_csv_row());
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let mut s = if reports.len() == 1 {
                reports[0].to_json_string()
            } else {
                serde_json::to_string_pretty(&reports).map_err(|e| Invalid(e.to_string()))?
            };
            s.push('\n');
            s
        }
        Format::Bin => return Err(Invalid("simulate output supports csv or json".into())),
    };
    emit(&args.out.out, output.as_bytes())?;
    Ok(if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_compare(args: CompareArgs) -> Result<ExitCode, Invalid> {
    if args.trials < 2 {
        return Err(Invalid("trials must be >= 2".into()));
    }
    let rho = check_rho(args.rho)?;
    let map = load_map(&args.matrix)?;
    let svd = svd_ascending(&map, args.matrix.rank_tol)?;
    let curve = privcurve::build_curve(&svd, map.cols());
    let rows =
        compare_mechanisms_with_shards(&map, rho, &[], args.trials, args.seed, shard_count()?)?;
    let output = match args.format {
        Format::Csv => comparison_to_csv(&rows),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&rows).map_err(|e| Invalid(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Bin => return Err(Invalid("compare output supports csv or json".into())),
    };
    emit(&args.out.out, output.as_bytes())?;

    // A feasible candidate sitting above the curve would falsify the bound.
    let pi = curve.privacy(rho)?;
    let violated = rows.iter().any(|row| {
        row.empirical_distortion <= rho && row.empirical_mmse > pi + 3.0 * row.empirical_mmse_se
    });
    Ok(if violated {
        eprintln!("converse violated: a feasible candidate exceeds pi(rho) = {pi}");
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Invalid> {
    let map = load_map(&args.matrix)?;
    let report = run_identity_suite(&map, args.matrix.rank_tol, args.seed)?;
    emit(&args.out.out, report.render_table().as_bytes())?;
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}
