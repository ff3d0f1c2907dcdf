use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use penalized_reflection::experiment::{run, ExperimentConfig, Kind, RunError};

/// Penalization experiments for reflected diffusions on convex domains.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the domain projection, coefficient bounds and starting point.
    Validate(RunArgs),
    /// Boundary-distance rate of the penalized scheme.
    DistRate(RunArgs),
    /// Strong error against the reflected reference.
    StrongRate(RunArgs),
    /// Terminal-value functionals against the reflected reference.
    WeakCompare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn execute(kind: Kind, args: RunArgs) -> Result<(), RunError> {
    let config = ExperimentConfig::load(&args.config)?;
    if config.experiment != kind {
        return Err(RunError::Config(format!(
            "config describes a {} experiment, not {kind}",
            config.experiment
        )));
    }
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| {
            RunError::Config("no output directory: pass --out or set output_dir".into())
        })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .map_err(|e| RunError::Config(format!("cannot start {} threads: {e}", args.threads)))?;
    log::info!(
        "running {kind} with {} threads into {}",
        pool.current_num_threads(),
        out.display()
    );
    pool.install(|| run(&config, &out))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Validate(a) => (Kind::Validate, a),
        Command::DistRate(a) => (Kind::DistRate, a),
        Command::StrongRate(a) => (Kind::StrongRate, a),
        Command::WeakCompare(a) => (Kind::WeakCompare, a),
    };
    match execute(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
