use clap::{Args, Parser, Subcommand};
use gfd_cli::{run, CliError, ExperimentConfig, Task};
use std::path::PathBuf;
use std::process::ExitCode;

/// Generalized fractional diffusion experiments.
///
/// Exit status: 0 on success, 2 for configuration errors, 3 for numerical
/// failures, 1 for I/O errors. `GFD_THREADS` caps the worker threads.
#[derive(Parser)]
#[command(name = "gfd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Noise seed, replacing `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, replacing `out_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Dotted config key to replace, e.g. `grid.t1=0.35`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve; writes mode, history and observation series.
    Simulate(Common),
    /// Tabulated Sonine partner of the kernel.
    Sonine(Common),
    /// Mittag-Leffler relaxation E_alpha(-lambda t^alpha).
    Ml(Common),
    /// Relaxation of the kernel by contour inversion.
    Invert(Common),
    /// Kernel from modal data with known eigenvalues.
    RecoverKernel(Common),
    /// Products lambda_k M and the gauge-fixed pair.
    RecoverProduct(Common),
    /// Initial state and source history before t0.
    RecoverHistory(Common),
    /// Kernel parameters from one scalar observation.
    RecoverFunctional(Common),
    /// Atomic order measure from eigenvalues.
    RecoverMeasure(Common),
    /// Two power-law kernels side by side: traces and recovered kernels.
    DemoUniqueness(Common),
}

impl Command {
    fn split(self) -> (Task, Common) {
        match self {
            Command::Simulate(c) => (Task::Simulate, c),
            Command::Sonine(c) => (Task::Sonine, c),
            Command::Ml(c) => (Task::Ml, c),
            Command::Invert(c) => (Task::Invert, c),
            Command::RecoverKernel(c) => (Task::RecoverKernel, c),
            Command::RecoverProduct(c) => (Task::RecoverProduct, c),
            Command::RecoverHistory(c) => (Task::RecoverHistory, c),
            Command::RecoverFunctional(c) => (Task::RecoverFunctional, c),
            Command::RecoverMeasure(c) => (Task::RecoverMeasure, c),
            Command::DemoUniqueness(c) => (Task::DemoUniqueness, c),
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("GFD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Schema {
            path: "GFD_THREADS".into(),
            message: format!("expected a positive integer, got {raw:?}"),
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Schema {
            path: "GFD_THREADS".into(),
            message: e.to_string(),
        })
}

fn execute(task: Task, common: Common) -> Result<(), CliError> {
    configure_threads()?;
    let mut cfg = ExperimentConfig::load(&common.config, &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = common.out_dir {
        cfg.out_dir = dir;
    }
    let manifest = run(task, &cfg)?;
    log::info!(
        "{} wrote {} files to {}",
        task.name(),
        manifest.files.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (task, common) = Cli::parse().command.split();
    match execute(task, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
