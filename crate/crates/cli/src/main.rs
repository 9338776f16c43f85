use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use vlsero_cli::commands::{self, CommandKind, Invocation, RunContext};
use vlsero_cli::{CliError, EXIT_OK};

/// Joint viral-load and seroconversion modelling.
///
/// Exit codes: 0 success, 1 I/O or other failure, 2 invalid config or
/// data, 3 numerical failure or non-reproducible output.
#[derive(Debug, Parser)]
#[command(name = "vlsero", version)]
struct Cli {
    /// Worker threads for the global rayon pool. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's top-level `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate a study from `[design]` and `[truth]`.
    Simulate(Common),
    /// Run the MCMC sampler.
    Fit(Common),
    /// Posterior estimands and trajectory bands from a fit directory.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: PathBuf,
    },
    /// Impute sgRNA trajectories for persons fitted without sgRNA data.
    Impute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fit: PathBuf,
    },
    /// k-fold masking cross-validation of sgRNA imputation.
    Cv {
        #[command(flatten)]
        common: Common,
        /// Overrides `[cv] folds`.
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Check the config and input files without fitting.
    Validate(Common),
    /// Re-execute a run from its manifest and verify every output hash.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn absolute(p: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
    p.map(|p| std::path::absolute(&p).map_err(|e| CliError::io(&p, e))).transpose()
}

fn invocation(kind: CommandKind, c: Common, fit: Option<PathBuf>, folds: Option<usize>) -> Result<Invocation, CliError> {
    Ok(Invocation {
        command: kind,
        config: absolute(c.config)?,
        out: absolute(c.out)?,
        seed: c.seed,
        folds,
        fit: absolute(fit)?,
    })
}

fn run(cli: Cli, ctx: &RunContext) -> Result<(), CliError> {
    let inv = match cli.command {
        Cmd::Rerun { manifest, out } => {
            commands::rerun(&manifest, &out, ctx)?;
            return Ok(());
        }
        Cmd::Simulate(c) => invocation(CommandKind::Simulate, c, None, None)?,
        Cmd::Fit(c) => invocation(CommandKind::Fit, c, None, None)?,
        Cmd::Summarize { common, fit } => invocation(CommandKind::Summarize, common, Some(fit), None)?,
        Cmd::Impute { common, fit } => invocation(CommandKind::Impute, common, Some(fit), None)?,
        Cmd::Cv { common, folds } => invocation(CommandKind::Cv, common, None, folds)?,
        Cmd::Validate(c) => invocation(CommandKind::Validate, c, None, None)?,
    };
    if let Some(m) = commands::execute(&inv, ctx)? {
        let dir = inv.out.as_deref().unwrap_or(Path::new("."));
        log::info!("wrote {} outputs and manifest to {}", m.outputs.len(), dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VLSERO_LOG", "info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(vlsero_cli::EXIT_OTHER);
        }
    }
    let ctx = RunContext { args: std::env::args().skip(1).collect(), threads: cli.threads };
    match run(cli, &ctx) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
