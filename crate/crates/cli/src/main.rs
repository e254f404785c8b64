//! `heislab`: command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or configuration
//! error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heislab::GroupElement;

use crate::report::{Format, Verdict};

#[derive(Debug, Parser)]
#[command(
    name = "heislab",
    version,
    about = "Numerical laboratory for the Heisenberg group and its lattice Gibbs measures"
)]
struct Cli {
    /// Directory for `<command>.csv` and `<command>.manifest.json`.
    #[arg(long, global = true, env = "HEISLAB_OUT")]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// What to print on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Model-file utilities.
    #[command(subcommand)]
    Model(ModelCommand),
    /// CC distance of a point to the identity (or to `--from`).
    Dist(DistArgs),
    /// Checks `|∇d| = 1` on a random off-axis cloud or given points.
    CheckEikonal(EikonalArgs),
    /// Fits `K₀` in `Δd ≤ K₀/d` over a random off-axis cloud.
    EstimateK0(K0Args),
    /// Monte-Carlo volume of CC balls.
    BallVolume(BallArgs),
    /// Runs a Metropolis chain and records the trajectory.
    Sample(SampleArgs),
    /// MCMC estimates of `E^{Λ,ω} f`.
    Estimate(EstimateArgs),
    /// Exponential moment `E^{Λ,ω} e^{εg}` with a heavy-tail diagnostic.
    ExpMoment(ExpMomentArgs),
    /// Pointwise U-bound check for examples 1 and 2.
    UboundPointwise(UboundPointwiseArgs),
    /// One-site integral U-bound over boundary radii.
    UboundIntegral(UboundIntegralArgs),
    /// Lower bound on the log-Sobolev constant from a test-function family.
    LsScan(ScanArgs),
    /// Lower bound on the spectral-gap constant from a test-function family.
    SgScan(ScanArgs),
    /// Entropy splitting along the two colour classes.
    TelescopeCheck(TelescopeArgs),
    /// Iterates `P = E^{Γ₁} E^{Γ₀}` and reports residuals.
    BlockDynamics(BlockArgs),
    /// Searches for violations of `Γ₂ ≥ ρ Γ`.
    CdProbe(CdProbeArgs),
}

#[derive(Debug, Subcommand)]
enum ModelCommand {
    /// Parses and validates a model file and echoes it.
    Validate(ModelArg),
}

#[derive(Debug, Args)]
struct ModelArg {
    /// Model file (TOML).
    #[arg(long)]
    model: PathBuf,
}

fn parse_point(s: &str) -> Result<GroupElement, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c] => GroupElement::try_new(a, b, c).map_err(|e| e.to_string()),
        _ => Err(format!(
            "expected three comma-separated coordinates, got `{s}`"
        )),
    }
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b] if a >= 0.0 && b >= 0.0 => Ok([a, b]),
        _ => Err(format!(
            "expected two non-negative radii `left,right`, got `{s}`"
        )),
    }
}

#[derive(Debug, Args)]
struct DistArgs {
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    point: GroupElement,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    from: Option<GroupElement>,
}

#[derive(Debug, Args)]
struct EikonalArgs {
    /// Points to check instead of a random cloud (repeatable).
    #[arg(long = "point", value_parser = parse_point, allow_hyphen_values = true)]
    points: Vec<GroupElement>,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

#[derive(Debug, Args)]
struct K0Args {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    seed: u64,
    /// Minimal ratio of horizontal norm to gauge for cloud points.
    #[arg(long, default_value_t = 0.1)]
    axis_fraction: f64,
}

#[derive(Debug, Args)]
struct BallArgs {
    #[arg(long = "radius", value_delimiter = ',', default_value = "1")]
    radii: Vec<f64>,
    #[arg(long, default_value_t = 200_000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Sequential,
    Checkerboard,
}

#[derive(Debug, Args)]
struct McmcArgs {
    /// Recorded sweeps.
    #[arg(long, default_value_t = 100_000)]
    sweeps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Burn-in sweeps (default: ten autocorrelation times from a pilot run).
    #[arg(long)]
    burn_in: Option<usize>,
    /// Proposal scale (default: tuned).
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Checkerboard)]
    schedule: ScheduleArg,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    mcmc: McmcArgs,
    /// Record every `thin`-th sweep.
    #[arg(long, default_value_t = 10)]
    thin: usize,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    mcmc: McmcArgs,
    /// Radial cylinder function such as `d0^2+d1` (repeatable).
    #[arg(long = "f", required = true, allow_hyphen_values = true)]
    functions: Vec<String>,
    /// Independent chains with seeds `seed ⊕ k`.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Compare with tensor-grid quadrature (windows of at most 3 sites);
    /// fails when any estimate is more than 3 standard errors off.
    #[arg(long)]
    compare: bool,
}

#[derive(Debug, Args)]
struct ExpMomentArgs {
    #[command(flatten)]
    model: ModelArg,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[arg(long, allow_hyphen_values = true)]
    g: String,
    #[arg(long)]
    eps: f64,
}

#[derive(Debug, Args)]
struct UboundPointwiseArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50.0)]
    d_max: f64,
    #[arg(long, default_value_t = 10.0)]
    omega_max: f64,
    /// Range of `d(x)` for the calibration pre-scan.
    #[arg(long, default_value_t = 5.0)]
    prescan_d_max: f64,
}

#[derive(Debug, Args)]
struct UboundIntegralArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Boundary radii `left,right` (repeatable).
    #[arg(long = "omega", value_parser = parse_pair, required = true)]
    omegas: Vec<[f64; 2]>,
    /// Test functions of site 0 (repeatable).
    #[arg(long = "f", default_values_t = ["1".to_string(), "d0".to_string(), "d0^2".to_string()])]
    functions: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2,4,8")]
    a_grid: Vec<f64>,
    /// Monte-Carlo cross-check with this many samples per boundary.
    #[arg(long)]
    mc_n: Option<usize>,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ScanArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Exponent `q` (default: the model's).
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `θ` of the capped exponential test function.
    #[arg(long, default_value_t = 0.5)]
    theta: f64,
    #[arg(long, default_value_t = 1e6)]
    cap: f64,
}

#[derive(Debug, Args)]
struct TelescopeArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Positive radial cylinder function.
    #[arg(long = "f", allow_hyphen_values = true)]
    function: String,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Debug, Args)]
struct BlockArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long = "f", allow_hyphen_values = true)]
    function: String,
    #[arg(long, default_value_t = 50)]
    n_max: usize,
    #[arg(long, default_value_t = 3)]
    panels: usize,
    #[arg(long, default_value_t = 12)]
    order: usize,
    /// Residual the iteration has to reach against the independent target.
    #[arg(long, default_value_t = 1e-3)]
    target: f64,
}

#[derive(Debug, Args)]
struct CdProbeArgs {
    #[arg(
        long = "rho",
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "-1e6,0,1e6"
    )]
    rhos: Vec<f64>,
    #[arg(long, default_value_t = 2.0)]
    half_width: f64,
    #[arg(long, default_value_t = 5)]
    grid_n: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let start = Instant::now();
    let report = match commands::run(&cli.command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let elapsed = start.elapsed();
    let mut stdout = std::io::stdout().lock();
    let printed = if let (Command::Dist(_), Format::Csv) = (&cli.command, cli.format) {
        use std::io::Write;
        writeln!(stdout, "{}", report.rows[0][0])
    } else {
        report.print(cli.format, &mut stdout)
    };
    if let Err(e) = printed {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    if let Some(dir) = &cli.out {
        if let Err(e) = report.write_artifacts(dir, &argv, elapsed) {
            eprintln!("error: writing artifacts to {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    }
    match report.verdict {
        Verdict::Pass => ExitCode::SUCCESS,
        Verdict::Fail => ExitCode::from(1),
    }
}
