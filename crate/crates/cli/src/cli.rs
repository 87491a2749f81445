//! Argument parsing, settings resolution, and dispatch. Every
//! successful run writes a manifest into its output directory; every
//! failure prints a one-line machine-readable JSON error to stderr and
//! exits nonzero.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use xrf_restore::{Error, Result};

use crate::commands::{self, PhantomParams};
use crate::manifest::RunManifest;
use crate::settings::{Overrides, Settings};

#[derive(Parser)]
#[command(
    name = "xrf-restore",
    version,
    about = "Poisson dictionary-learning restoration of fast macro-XRF scans"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth scene (rates, RGB, planted factors).
    Phantom(PhantomArgs),
    /// Simulate a Poisson raster scan of a rate volume at a given dwell.
    Simulate(SimulateArgs),
    /// Restore rates from a noisy scan with the regularized Poisson solver.
    Denoise(DenoiseArgs),
    /// Run the least-squares MCR-ALS baseline on a noisy scan.
    Baseline(BaselineArgs),
    /// Score an estimated rate volume against reference counts.
    Evaluate(EvaluateArgs),
    /// Dwell-time sweep comparing raw, baseline, and solver restorations.
    Sweep(SweepArgs),
}

#[derive(Args, Clone, Debug)]
struct Tuning {
    /// Number of dictionary atoms.
    #[arg(long)]
    atoms: Option<usize>,
    /// Weight of the RGB-adaptive total-variation penalty.
    #[arg(long)]
    lambda_tv: Option<f64>,
    /// Weight of the elastic net penalty.
    #[arg(long)]
    lambda_en: Option<f64>,
    /// Elastic net mix in [0, 1]; 1 is pure squared-l2.
    #[arg(long)]
    alpha: Option<f64>,
    /// RGB edge sensitivity of the TV weights.
    #[arg(long)]
    beta: Option<f64>,
    /// Iterations past the loss minimum before the solver stops.
    #[arg(long)]
    patience: Option<usize>,
    /// Outer iteration cap for the solver.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Pruning threshold on abundance divided by dwell.
    #[arg(long)]
    lasso_tau: Option<f64>,
    /// Comma-separated dwell speedup factors for sweeps.
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<f64>>,
    /// Base RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Tuning {
    fn overrides(&self) -> Overrides {
        Overrides {
            atoms: self.atoms,
            lambda_tv: self.lambda_tv,
            lambda_en: self.lambda_en,
            alpha: self.alpha,
            beta: self.beta,
            patience: self.patience,
            max_iters: self.max_iters,
            lasso_tau: self.lasso_tau,
            prune_every: None,
            alt_block: None,
            mcr_max_outer: None,
            mcr_tol: None,
            factors: self.factors.clone(),
            seed: self.seed,
            threads: self.threads,
        }
    }
}

#[derive(Args)]
struct PhantomArgs {
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 32)]
    channels: usize,
    /// Number of planted atoms.
    #[arg(long, default_value_t = 4)]
    m_true: usize,
    /// Number of piecewise-constant zones.
    #[arg(long, default_value_t = 12)]
    regions: usize,
    /// Largest rate in the volume (counts per second).
    #[arg(long, default_value_t = 200.0)]
    peak_rate: f64,
    /// Fraction of abundance edges visible in the RGB image.
    #[arg(long, default_value_t = 0.9)]
    rgb_correlation: f64,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct SimulateArgs {
    /// Rate volume container.
    #[arg(long)]
    input: PathBuf,
    /// Dwell time in seconds.
    #[arg(long)]
    dwell: f64,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Count volume container.
    #[arg(long)]
    input: PathBuf,
    /// Registered RGB image container.
    #[arg(long)]
    rgb: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct BaselineArgs {
    /// Count volume container.
    #[arg(long)]
    input: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated rate volume container.
    #[arg(long)]
    input: PathBuf,
    /// Reference count volume anchoring the ground truth.
    #[arg(long)]
    gt: PathBuf,
    /// Channel bands "label:lo:hi,..." for per-band metrics.
    #[arg(long)]
    bands: Option<String>,
    /// Also write 16-bit PGM band maps.
    #[arg(long)]
    maps: bool,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args)]
struct SweepArgs {
    /// Reference count volume (the ground-truth scan).
    #[arg(long)]
    input: PathBuf,
    /// Registered RGB image container.
    #[arg(long)]
    rgb: PathBuf,
    /// Output directory.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::Format(_) => "format",
        Error::Checksum { .. } => "checksum",
        Error::ShapeMismatch(_) => "shape_mismatch",
        Error::Config(_) => "config",
        Error::Invariant(_) => "invariant",
        Error::NonFinite(_) => "non_finite",
        Error::NonConvergence { .. } => "non_convergence",
    }
}

/// Parse arguments, run the selected command, and return the process
/// exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({
                "error": e.to_string(),
                "kind": error_kind(&e),
            });
            eprintln!("{payload}");
            1
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let (tuning, out_dir) = match &cli.command {
        Command::Phantom(a) => (&a.tuning, a.output.clone()),
        Command::Simulate(a) => (&a.tuning, a.output.clone()),
        Command::Denoise(a) => (&a.tuning, a.output.clone()),
        Command::Baseline(a) => (&a.tuning, a.output.clone()),
        Command::Evaluate(a) => (&a.tuning, a.output.clone()),
        Command::Sweep(a) => (&a.tuning, a.output.clone()),
    };
    let settings = Settings::resolve(tuning.config.as_deref(), &tuning.overrides())?;

    let started = Instant::now();
    let work = || -> Result<RunManifest> {
        match &cli.command {
            Command::Phantom(a) => {
                let params = PhantomParams {
                    height: a.height,
                    width: a.width,
                    channels: a.channels,
                    m_true: a.m_true,
                    regions: a.regions,
                    peak_rate: a.peak_rate,
                    rgb_correlation: a.rgb_correlation,
                };
                commands::cmd_phantom(&params, &a.output, &settings)
            }
            Command::Simulate(a) => commands::cmd_simulate(&a.input, a.dwell, &a.output, &settings),
            Command::Denoise(a) => commands::cmd_denoise(&a.input, &a.rgb, &a.output, &settings),
            Command::Baseline(a) => commands::cmd_baseline(&a.input, &a.output, &settings),
            Command::Evaluate(a) => commands::cmd_evaluate(
                &a.input,
                &a.gt,
                a.bands.as_deref(),
                a.maps,
                &a.output,
                &settings,
            ),
            Command::Sweep(a) => commands::cmd_sweep(&a.input, &a.rgb, &a.output, &settings),
        }
    };
    let result = match settings.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut manifest = result?;
    manifest.duration_s = started.elapsed().as_secs_f64();
    manifest.write(&out_dir)?;
    Ok(())
}
