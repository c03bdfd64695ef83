//! Command-line front end: config loading, output directories, and one
//! function per subcommand.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::OutDir;
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "llp",
    version,
    about = "Label-proportion learning with sampled mini-bags"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    GenData(Common),
    /// Train one classifier and write its trace and checkpoint.
    Train(Common),
    /// Estimate mini-bag proportion error for several sample sizes.
    MaeCurve(Common),
    /// Train every method, sample size, and seed in a grid.
    Ablation(Common),
    /// Train and write reliability tables and confidence histograms.
    Calibrate(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::GenData(c) => ("gen-data", c),
            Command::Train(c) => ("train", c),
            Command::MaeCurve(c) => ("mae-curve", c),
            Command::Ablation(c) => ("ablation", c),
            Command::Calibrate(c) => ("calibrate", c),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let (name, common) = cli.command.parts();
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.train.validate()?;
    let out = OutDir::prepare(&common.out, common.force)?;
    out.write(commands::MANIFEST_FILE, &cfg.manifest(name))?;
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg, &out),
        Command::Train(_) => commands::train(&cfg, &out),
        Command::MaeCurve(_) => commands::mae_curve(&cfg, &out),
        Command::Ablation(_) => commands::ablation(&cfg, &out),
        Command::Calibrate(_) => commands::calibrate(&cfg, &out),
    }
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// process exit status. Diagnostics go to stderr.
pub fn parse_and_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
