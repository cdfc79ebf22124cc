use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod eval;
mod fuse;
mod settings;
mod sweep;
mod transfer;

use settings::{ConfigFile, Resolver, UsageError};

#[derive(Parser, Debug)]
#[command(name = "fda", version, about = "Spectral domain adaptation and pseudo-label toolkit")]
struct Cli {
    /// Settings file of `key = value` lines (a run manifest works too).
    /// Flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads [default: available cores]
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[arg(long, short, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Restyle a directory of source images with seeded target pairings.
    Transfer(transfer::TransferArgs),
    /// Transfer one pair at several window sizes.
    Sweep(sweep::SweepArgs),
    /// Average cached model predictions into pseudo-labels.
    Fuse(fuse::FuseArgs),
    /// Score predictions against ground truth.
    Eval(eval::EvalArgs),
}

/// Global flags after parsing, shared by subcommands.
pub struct Global {
    pub config: ConfigFile,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

/// Outcome of a run that got to process its items.
pub enum Status {
    Success,
    /// Some items failed; the rest were written.
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Debug } else { log::LevelFilter::Info })
        .format_timestamp(None)
        .format_target(false)
        .init();

    match run(cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => {
            log::error!("{e:#}");
            if is_usage(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let config = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let global = Global {
        config,
        seed: cli.seed,
        workers: cli.workers,
    };
    match cli.command {
        Command::Transfer(args) => transfer::run(args, global),
        Command::Sweep(args) => sweep::run(args, global),
        Command::Fuse(args) => fuse::run(args, global),
        Command::Eval(args) => eval::run(args, global),
    }
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<UsageError>() || matches!(c.downcast_ref::<fda_core::Error>(), Some(fda_core::Error::Budget(_)))
    })
}

/// Resolves `--workers`, defaulting to the number of available cores.
pub fn resolve_workers(r: &mut Resolver, flag: Option<usize>) -> anyhow::Result<usize> {
    let default = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let workers = r.with_default("workers", flag, default)?;
    if workers == 0 {
        return Err(settings::usage("--workers must be at least 1"));
    }
    Ok(workers)
}

pub fn thread_pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// PNG files directly inside `dir`, sorted by file name, keyed by file stem.
pub fn list_pngs(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| settings::usage(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.push((stem.to_string(), path.clone()));
            } else {
                log::warn!("skipping {}: file name is not valid UTF-8", path.display());
            }
        }
    }
    files.sort();
    for pair in files.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(settings::usage(format!(
                "{} and {} share the id {:?}",
                pair[0].1.display(),
                pair[1].1.display(),
                pair[0].0
            )));
        }
    }
    Ok(files)
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| settings::usage(format!("cannot create {}: {e}", dir.display())))
}

pub fn check_beta(beta: f64) -> anyhow::Result<()> {
    if !(0.0..0.5).contains(&beta) {
        return Err(settings::usage(format!("beta must lie in [0, 0.5), got {beta}")));
    }
    Ok(())
}
