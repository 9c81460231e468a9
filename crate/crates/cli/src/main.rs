use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfgc_cli::config::parse_config;
use mfgc_cli::run::{audit_command, probe_command, solve_command, Outcome};

/// Mean field games of controls on the torus.
///
/// Exit status: 0 success, 2 non-convergence or failed check (reports are
/// still written), 1 error. MFGC_THREADS sets the worker count.
#[derive(Parser)]
#[command(name = "mfgc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the coupled system and write fields, history and report.
    Solve {
        config: PathBuf,
        /// Override `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check growth, monotonicity and drift assumptions without solving.
    Audit {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve from several random starts and compare the solutions.
    ProbeUniqueness {
        config: PathBuf,
        /// Number of initializations; defaults to `[probe] inits`.
        #[arg(long)]
        inits: Option<usize>,
        /// Defaults to `[probe] seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("MFGC_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| anyhow::anyhow!("MFGC_THREADS must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    configure_threads()?;
    let load = |path: &PathBuf, out: Option<PathBuf>| -> anyhow::Result<_> {
        let mut cfg = parse_config(path)?;
        if let Some(dir) = out {
            cfg.output_dir = dir;
        }
        Ok(cfg)
    };
    match cli.command {
        Command::Solve { config, out } => solve_command(&load(&config, out)?),
        Command::Audit { config, out } => audit_command(&load(&config, out)?),
        Command::ProbeUniqueness {
            config,
            inits,
            seed,
            out,
        } => {
            let cfg = load(&config, out)?;
            let inits = inits.unwrap_or(cfg.probe.inits);
            if inits < 2 {
                anyhow::bail!("--inits must be at least 2");
            }
            probe_command(&cfg, inits, seed.unwrap_or(cfg.probe.seed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
