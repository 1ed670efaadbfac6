use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use impedance_sbi::config::{parse_config, RunConfig};
use impedance_sbi::pipeline::benchmark::{run_stage, Stage};
use impedance_sbi::Error;

/// Surface impedance inference for a cuboid room.
#[derive(Parser, Debug)]
#[command(name = "impedance-sbi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; defaults reproduce the benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory (overrides `output_dir` and IMPEDANCE_SBI_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Derive every seed from this value.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Simulate the training set and the reference observation.
    Generate,
    /// Train the flow on the generated set.
    Train,
    /// Sample the posterior for the reference observation.
    Infer,
    /// Posterior predictive check.
    Ppc,
    /// L-C2ST calibration test.
    C2st,
    /// Impedance errors and MAC tables.
    Metrics,
    /// One-axis parameter study.
    Study,
    /// All stages from generate to metrics.
    RunAll,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Generate => Stage::Generate,
            Command::Train => Stage::Train,
            Command::Infer => Stage::Infer,
            Command::Ppc => Stage::Ppc,
            Command::C2st => Stage::C2st,
            Command::Metrics => Stage::Metrics,
            Command::Study => Stage::Study,
            Command::RunAll => Stage::RunAll,
        }
    }
}

/// Exit code per error category.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Stage { source, .. } => exit_code(source),
        Error::Config(_) | Error::Validation(_) => 2,
        Error::Artifact(_) => 3,
        Error::Io(_) | Error::Json(_) => 4,
        Error::Solver { .. } | Error::Conditioning(_) => 5,
        Error::Training(_) => 6,
        Error::Diagnostic(_) => 7,
        _ => 1,
    }
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), Error> {
    let mut cfg = match &cli.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed_override {
        cfg.apply_seed_override(s);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("IMPEDANCE_SBI_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    Ok((cfg, out))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} workers: {e}");
            return ExitCode::from(1);
        }
    }
    let result = load(&cli).and_then(|(cfg, out)| {
        let stage = Stage::from(cli.command);
        log::info!("{} -> {}", stage.name(), out.display());
        run_stage(stage, &cfg, &out)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
