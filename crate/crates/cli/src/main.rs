//! `rrde`: build non-uniqueness examples for reflected equations, simulate
//! them, classify moduli of continuity and run fractional Brownian
//! Monte-Carlo suites.

mod config;
mod construct;
mod failure;
mod fbm_cmd;
mod modulus;
mod output;
mod simulate;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use failure::Failure;
use output::{Format, Output};

#[derive(Debug, Parser)]
#[command(name = "rrde", version, about = "Reflected rough differential equations laboratory")]
struct Cli {
    /// JSON config file of the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads for Monte-Carlo batches.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build driving paths: thm1, prop1, thm2 or fbm_drift.
    Construct,
    /// Solve the reflected equation along given paths, or the figure-2 run.
    Simulate,
    /// Osgood verdict for a modulus, e.g. `modulus holder 0.5`.
    Modulus {
        /// holder, sqrt_log or zero; omit to read `omega` from --config.
        family: Option<String>,
        params: Vec<f64>,
    },
    /// fBm sampling and Monte-Carlo tasks.
    Fbm,
    /// Run a self-check suite.
    Verify {
        #[arg(value_enum)]
        suite: verify::Suite,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Construct => "construct",
            Command::Simulate => "simulate",
            Command::Modulus { .. } => "modulus",
            Command::Fbm => "fbm",
            Command::Verify { .. } => "verify",
        }
    }
}

fn dispatch(cli: &Cli, out: &mut Output) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        rrde::parallel::set_threads(n)?;
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Construct => {
            let cfg = config::load::<construct::ConstructConfig>(config, cli.seed)?;
            out.config = Some(cfg.echo.clone());
            construct::run(cfg, out)
        }
        Command::Simulate => {
            let cfg = config::load::<simulate::SimulateConfig>(config, cli.seed)?;
            out.config = Some(cfg.echo.clone());
            simulate::run(cfg, out)
        }
        Command::Fbm => {
            let cfg = config::load::<fbm_cmd::FbmTask>(config, cli.seed)?;
            out.config = Some(cfg.echo.clone());
            fbm_cmd::run(cfg, out)
        }
        Command::Modulus { family, params } => {
            let (omega, opts) = match family {
                Some(f) => {
                    out.config = Some(serde_json::json!({ "family": f, "params": params }));
                    (modulus::from_args(f, params)?, None)
                }
                None => {
                    let cfg = config::load::<modulus::ModulusConfig>(config, cli.seed)?;
                    out.config = Some(cfg.echo.clone());
                    (cfg.body.omega, cfg.body.osgood)
                }
            };
            let verdict = modulus::run(&omega, opts, out)?;
            println!("{}", serde_json::to_string_pretty(&verdict).map_err(|e| Failure::Numeric(e.to_string()))?);
            Ok(())
        }
        Command::Verify { suite } => {
            out.config = Some(serde_json::json!({ "suite": suite }));
            verify::run(*suite, out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut out = Output::new(&cli.out, cli.format);
    let outcome = dispatch(&cli, &mut out);
    let manifest = out.finish(cli.command.name(), cli.threads, &outcome);
    match (&outcome, manifest) {
        (Ok(()), Ok(path)) => {
            eprintln!("wrote {} files; manifest {}", out.files().len(), path.display());
            ExitCode::SUCCESS
        }
        (Err(f), _) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
        (Ok(()), Err(f)) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
