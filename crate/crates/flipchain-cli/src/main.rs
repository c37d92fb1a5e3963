//! Reproducible experiment driver: seeded ensembles, deterministic
//! artifacts, one subcommand per headline experiment.
//!
//! Exit codes: 0 success; 1 assertion failure under `--check`; 2 usage or
//! configuration error; 3 numeric failure.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use commands::CommandError;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "flipchain",
    about = "Disordered harmonic chains under velocity-flip noise: spectra, localization diagnostics, and Green-Kubo conductivity by Monte Carlo and resolvent routes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = library default). Artifacts are byte-identical
    /// at any setting.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Exit nonzero if any acceptance-relevant assertion fails.
    #[arg(long, global = true)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalue tables and per-mode participation ratios.
    Spectrum,
    /// Disorder-averaged mode-overlap decay and its fitted rate.
    Localization,
    /// Closed-form Poisson-equation residuals and coefficient decay.
    PoissonCheck,
    /// Monte Carlo Green-Kubo conductivity over the λ grid.
    KappaMc,
    /// Resolvent Green-Kubo conductivity over the λ grid.
    KappaResolvent,
    /// Variational lower bound against the resolvent value (periodic).
    LowerBound,
    /// Zero-noise variance decay of the integrated current.
    Insulator,
    /// Resolvent conductivity sweep with a log-log slope fit.
    ScalingSweep,
    /// Re-hash the config echo and artifacts recorded in a manifest.
    Verify,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Localization => "localization",
            Command::PoissonCheck => "poisson-check",
            Command::KappaMc => "kappa-mc",
            Command::KappaResolvent => "kappa-resolvent",
            Command::LowerBound => "lower-bound",
            Command::Insulator => "insulator",
            Command::ScalingSweep => "scaling-sweep",
            Command::Verify => "verify",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(CommandError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CommandError::Numeric(msg)) => {
            eprintln!("numeric failure: {msg}");
            ExitCode::from(3)
        }
        Err(CommandError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<u8, CommandError> {
    if matches!(cli.command, Command::Verify) {
        let problems = artifacts::verify_dir(&cli.out)?;
        return if problems.is_empty() {
            println!("verify: ok");
            Ok(0)
        } else {
            for p in &problems {
                eprintln!("verify: {p}");
            }
            Ok(1)
        };
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CommandError::Usage("--config is required".into()))?;
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| CommandError::Usage(format!("cannot read {}: {e}", config_path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(CommandError::Usage)?;
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    let seed = cfg.run.seed;
    let started = Instant::now();
    let name = cli.command.name();

    let failures = if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| CommandError::Numeric(e.to_string()))?;
        pool.install(|| {
            commands::dispatch(name, &cfg, &cli.out, seed, cli.threads, cli.check, started)
        })?
    } else {
        commands::dispatch(name, &cfg, &cli.out, seed, cli.threads, cli.check, started)?
    };

    if failures.is_empty() {
        println!("{name}: ok ({} s)", started.elapsed().as_secs_f64());
        Ok(0)
    } else {
        for f in &failures {
            eprintln!("{name}: CHECK {f}");
        }
        if cli.check {
            Ok(1)
        } else {
            println!(
                "{name}: completed with {} advisory finding(s); pass --check to gate on them",
                failures.len()
            );
            Ok(0)
        }
    }
}
