mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Optimal moving dividend barrier: solve, evaluate, simulate and verify.
#[derive(Debug, Parser)]
#[command(name = "divbar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimal barrier, classified solution family and d(x).
    SolveBarrier(SolveArgs),
    /// Variational, ordering and stopping checks with pass/fail per suite.
    Verify(VerifyArgs),
    /// Monte Carlo estimates of the control and stopping problems plus one path.
    Simulate(SimulateArgs),
    /// Closed-form constants for geometric Brownian motion.
    GbmConstants(GbmArgs),
    /// Value function and its residuals on a grid.
    ValueSurface(SurfaceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Model description (JSON). Defaults to gBm with alpha=0.04, beta=0.3, r=0.05.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub xlo: f64,
    #[arg(long, default_value_t = 10.0)]
    pub xhi: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Barrier grid size.
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
    /// Initial point `x,y` of a forward solution to classify (repeatable).
    /// Without it a family around b*(x0) at the geometric mid-point is used.
    #[arg(long = "start", value_parser = parse_point)]
    pub starts: Vec<(f64, f64)>,
    /// Forward solutions are followed up to this `x` (default max(1e8, 100 xhi)).
    /// Solutions just below b* leave it slowly, so this needs to be large.
    #[arg(long)]
    pub sweep_xend: Option<f64>,
    /// Give up after this many far anchors.
    #[arg(long, default_value_t = 120)]
    pub max_anchors: usize,
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[arg(long, default_value_t = 20_240_601)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Horizon (default 50 / r).
    #[arg(long)]
    pub tmax: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mc: McArgs,
    /// Points per axis of the continuation grid.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// Multiply the barrier by this factor before checking.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub mc: McArgs,
    /// Initial state of the controlled problem (default x = 2 xlo, y = b*(x)).
    #[arg(long)]
    pub x: Option<f64>,
    #[arg(long)]
    pub y: Option<f64>,
    /// Initial state of the stopping problem.
    #[arg(long, default_value_t = 1.0)]
    pub stop_x: f64,
    #[arg(long, default_value_t = 2.0)]
    pub stop_y: f64,
    /// Keep every n-th step of the recorded path.
    #[arg(long, default_value_t = 10)]
    pub record_every: u64,
    /// Largest tolerated fraction of paths cut off by the horizon.
    #[arg(long, default_value_t = 1e-3)]
    pub max_censored: f64,
    /// Barrier grid size for models without a closed form.
    #[arg(long, default_value_t = 400)]
    pub grid: usize,
}

#[derive(Debug, Clone, Args)]
pub struct GbmArgs {
    /// Model description (JSON, kind "gbm").
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SurfaceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Points per axis.
    #[arg(long, default_value_t = 50)]
    pub grid: usize,
    /// `y` ranges up to this multiple of b(x).
    #[arg(long, default_value_t = 2.0)]
    pub y_factor: f64,
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("DIVBAR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("DIVBAR_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::SolveBarrier(a) => commands::solve_barrier(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::GbmConstants(a) => commands::gbm_constants(&a),
        Command::ValueSurface(a) => commands::value_surface(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("divbar: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
