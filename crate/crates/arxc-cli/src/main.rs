//! `arxc` — finite-window controller conversion experiments.
//!
//! Converts dynamic feedback controllers into a window form driven purely by
//! recorded inputs and outputs, then measures what that costs: closed-loop
//! deviation sweeps, frequency-domain error bounds, and a fixed per-output
//! operation budget demonstrated under a leveled-evaluation mock.
//!
//! Every command prints a JSON summary on stdout and writes its artifacts
//! into `--out`. Exit codes: 0 on success, 2 for configuration errors, 3 for
//! numerical diagnostics, 4 for runtime divergence.

mod commands;
mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Inclusive window-order range `A..B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderRange {
    pub lo: usize,
    pub hi: usize,
}

fn parse_order_range(s: &str) -> Result<OrderRange, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected an inclusive range A..B, got {s:?}"))?;
    let lo: usize = a
        .trim()
        .parse()
        .map_err(|e| format!("bad lower bound {a:?}: {e}"))?;
    let hi: usize = b
        .trim()
        .parse()
        .map_err(|e| format!("bad upper bound {b:?}: {e}"))?;
    if lo == 0 {
        return Err("window orders start at 1".to_string());
    }
    if hi < lo {
        return Err(format!("range is empty: {lo} > {hi}"));
    }
    Ok(OrderRange { lo, hi })
}

/// Artifact family to emit; CSV tables are always written, `json` and `svg`
/// add a machine-readable document or rendered charts on top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Builtin system name (`flexible_joint`, `deadbeat`) or path to a JSON
    /// system file
    #[arg(long, default_value = "flexible_joint")]
    pub system: String,

    /// Directory receiving the emitted files
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,

    /// Artifact family to emit
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

/// Run the nominal and window-form closed loops side by side.
#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Window order N; defaults to the system's configured order (or 10)
    #[arg(long)]
    pub order: Option<usize>,

    /// Simulation horizon in steps
    #[arg(long, default_value_t = 300)]
    pub horizon: usize,

    /// Step at which the controller switches from its recursive warm-up to
    /// the window form; defaults to the system's schedule (or max(N, 20))
    #[arg(long)]
    pub switch: Option<usize>,

    /// Deviation tolerance; with a linear system description this derives
    /// the perturbation budget the run is checked against
    #[arg(long)]
    pub epsilon: Option<f64>,
}

/// Sweep the window order over a range and tabulate worst-case deviations.
#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Inclusive window-order range A..B
    #[arg(long = "order-range", value_parser = parse_order_range, default_value = "5..15")]
    pub order_range: OrderRange,

    /// Simulation horizon in steps
    #[arg(long, default_value_t = 300)]
    pub horizon: usize,

    /// Switch step shared by every run; defaults to the system's schedule
    /// (or max(B, 20))
    #[arg(long)]
    pub switch: Option<usize>,
}

/// Frequency-domain error bound, order selection, and window coefficients
/// for a linear (or linearized) system.
#[derive(Debug, Args)]
pub struct SpectralArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Window order N; defaults to the system's configured order (or 10)
    #[arg(long)]
    pub order: Option<usize>,

    /// Deviation tolerance driving the order-bound derivation
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,

    /// Number of uniform frequency-grid points on the unit circle
    #[arg(long = "omega-grid", default_value_t = 1024)]
    pub omega_grid: usize,

    /// Horizon of the time-domain comparison run
    #[arg(long, default_value_t = 300)]
    pub horizon: usize,
}

/// Evaluate the window controller under a multiplicative depth budget and
/// contrast it with the recursive update.
#[derive(Debug, Args)]
pub struct EncryptedDemoArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Window order N; defaults to the system's configured order (or 10)
    #[arg(long)]
    pub order: Option<usize>,

    /// Multiplicative depth granted to a fresh encryption
    #[arg(long, default_value_t = 8)]
    pub depth: u32,

    /// Fractional bits of the fixed-point encoding (8..=30)
    #[arg(long = "scale-bits", default_value_t = 16)]
    pub scale_bits: u32,

    /// Number of recorded steps to evaluate
    #[arg(long, default_value_t = 300)]
    pub horizon: usize,

    /// Step at which window evaluation begins; defaults to the system's
    /// schedule (or max(N, 20))
    #[arg(long)]
    pub switch: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(
    name = "arxc",
    version,
    about = "Finite-window controller conversion and closed-loop error analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    Simulate(SimulateArgs),
    Sweep(SweepArgs),
    Spectral(SpectralArgs),
    EncryptedDemo(EncryptedDemoArgs),
}

fn main() {
    let cli = Cli::parse();

    if let Ok(raw) = std::env::var("ARX_SEED_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n > 0 => {
                // Ignore the error from a pool that is already initialized:
                // the cap is best-effort under repeated in-process dispatch.
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("error: ARX_SEED_THREADS must be a positive integer, got {raw:?}");
                std::process::exit(2);
            }
        }
    }

    let result = match &cli.command {
        Command::Simulate(args) => commands::cmd_simulate(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::Spectral(args) => commands::cmd_spectral(args),
        Command::EncryptedDemo(args) => commands::cmd_encrypted_demo(args),
    };

    match result {
        Ok(summary) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).expect("summary serializes")
            );
        }
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.code);
        }
    }
}
