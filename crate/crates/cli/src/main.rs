//! `stochplate` command-line driver.
//!
//! One JSON config per run. Exit codes: 0 success, 1 numerical failure,
//! 2 config error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod artifact;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::{error, info, warn};

use artifact::{write_residual_history, Sink};
use commands::RunError;
use config::RunConfig;

pub const THREADS_ENV: &str = "STOCHPLATE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "stochplate", version, about = "Effective bending stiffness of random thin plates")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Fixed reduction order: byte-identical output for any thread count.
    #[arg(long)]
    deterministic: bool,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides the environment and the config.
    #[arg(long)]
    threads: Option<usize>,
}

fn resolve_threads(flag: Option<usize>, cfg: Option<usize>) -> Result<usize, RunError> {
    if let Some(n) = flag {
        return match n {
            0 => Err(RunError::Config("config error: --threads must be at least 1".into())),
            n => Ok(n),
        };
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| RunError::Config(format!("config error: {THREADS_ENV}={v:?} is not a positive integer")))?;
        match cfg {
            Some(c) => warn!("{THREADS_ENV}={n} overrides threads={c} from the config"),
            None => warn!("{THREADS_ENV}={n} sets the thread count"),
        }
        return Ok(n);
    }
    Ok(cfg.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())))
}

fn execute(cli: &Cli) -> Result<(), (RunError, Option<PathBuf>)> {
    let cfg = RunConfig::load(&cli.config).map_err(|e| (RunError::Config(e.0), None))?;
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("stochplate-out"));
    let threads = resolve_threads(cli.threads, cfg.threads).map_err(|e| (e, None))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| (RunError::Io(std::io::Error::other(e)), None))?;
    let sink = Sink::new(dir.clone(), cfg.echo(), cli.deterministic, threads).map_err(|e| (e.into(), None))?;
    info!(
        "{} with {threads} thread(s){} into {}",
        cfg.command.name(),
        if cli.deterministic { ", deterministic" } else { "" },
        dir.display()
    );
    pool.install(|| commands::run(&cfg, &sink, cli.deterministic))
        .map_err(|e| (e, Some(dir)))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, dir)) => {
            error!("{e}");
            if let (RunError::Numerical(inner), Some(dir)) = (&e, dir) {
                if let Some(history) = inner.residual_history() {
                    let seed = match inner {
                        stochplate::Error::Seeded { seed, .. } => Some(*seed),
                        _ => None,
                    };
                    match write_residual_history(&dir, seed, history) {
                        Ok(p) => error!("residual history written to {}", p.display()),
                        Err(io) => error!("could not write residual history: {io}"),
                    }
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
