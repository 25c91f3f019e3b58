//! Argument parsing and dispatch.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use adakern_core::partition::{DEFAULT_ALPHA_MAX, DEFAULT_ALPHA_MIN, DEFAULT_INTERVALS, DEFAULT_RESOLUTION, DEFAULT_TAU};
use adakern_core::adaptive::DEFAULT_SUBSAMPLE_CAP;
use clap::{Args, Parser, Subcommand};

use crate::commands::{self, output_dir, AlphaOptions, Run, TableOptions};
use crate::config::{Policy, RunConfig};
use crate::error::{Error, Result};

/// Adaptive robust kernel experiments.
///
/// Exit codes: 0 success (including solves that did not converge), 1 input,
/// I/O or configuration error, 2 verification failure, 3 solver failure.
#[derive(Debug, Parser)]
#[command(name = "adakern", version, about, long_about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a partition table file, or verify one by step halving.
    PartitionTable(PartitionTableArgs),
    /// Estimate the kernel shape alpha of a residual file.
    EstimateAlpha(EstimateAlphaArgs),
    /// Robust line fit on a point file or synthetic data.
    Fit(RunArgs),
    /// Point-to-plane ICP between two clouds or synthetic scans.
    Icp(RunArgs),
    /// Bundle adjustment from a perturbed start.
    Ba(RunArgs),
    /// Convergence-basin sweep of bundle adjustment over start noise levels.
    BasinSweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Smallest tabulated alpha.
    #[arg(long, default_value_t = DEFAULT_ALPHA_MIN, allow_negative_numbers = true)]
    pub alpha_min: f64,
    /// Largest tabulated alpha.
    #[arg(long, default_value_t = DEFAULT_ALPHA_MAX, allow_negative_numbers = true)]
    pub alpha_max: f64,
    /// Grid spacing in alpha.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: f64,
    /// Truncation limit in units of the scale c.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Simpson intervals on [0, tau].
    #[arg(long, default_value_t = DEFAULT_INTERVALS)]
    pub intervals: usize,
}

impl GridArgs {
    fn options(&self) -> TableOptions {
        TableOptions {
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            resolution: self.resolution,
            tau: self.tau,
            intervals: self.intervals,
        }
    }
}

#[derive(Debug, Args)]
pub struct PartitionTableArgs {
    /// Table file to write [default: <output-dir>/partition_table.txt].
    #[arg(long, conflicts_with = "verify")]
    pub output: Option<PathBuf>,
    /// Verify this table file instead of building one.
    #[arg(long)]
    pub verify: Option<PathBuf>,
    /// Largest accepted step-halving deviation when verifying.
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    /// Output directory [default: working directory].
    #[arg(long, env = "ADAKERN_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct EstimateAlphaArgs {
    /// Residual file: whitespace-separated values, `#` comments.
    pub residuals: PathBuf,
    /// Kernel scale c, in residual units.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Cached partition table; replaces the grid options.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Residuals used by the grid search; larger sets are subsampled.
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE_CAP)]
    pub subsample_cap: usize,
    /// Subsampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration file (TOML) [default: built-in defaults].
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the configuration [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Kernel policy: adaptive, squared, huber, cauchy, geman-mcclure,
    /// welsch or fixed:<alpha> [default: adaptive].
    #[arg(long)]
    pub policy: Option<Policy>,
    /// Comma-separated policies run on identical data, e.g. adaptive,squared.
    #[arg(long, value_delimiter = ',')]
    pub compare: Vec<Policy>,
    /// Output directory; overrides `output_dir` [default: working directory].
    #[arg(long, env = "ADAKERN_OUTPUT_DIR")]
    pub output_dir: Option<PathBuf>,
    /// Cached partition table; overrides `table`.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Input data, overriding the configuration: points for fit, a
    /// scene for ba; for icp give `source,target`.
    #[arg(long, value_delimiter = ',')]
    pub data: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Worker threads for the sweep [default: all cores].
    #[arg(long, env = "ADAKERN_THREADS")]
    pub threads: Option<usize>,
}

impl RunArgs {
    fn resolve(&self, command: &str) -> Result<Run> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(p) = self.policy {
            config.policy = p;
            config.compare.clear();
        }
        if !self.compare.is_empty() {
            config.compare = self.compare.clone();
        }
        if let Some(t) = &self.table {
            config.table = Some(t.clone());
        }
        match (command, self.data.as_slice()) {
            (_, []) => {}
            ("fit", [p]) => config.line.data = Some(p.clone()),
            ("ba" | "basin-sweep", [p]) => config.ba.file = Some(p.clone()),
            ("icp", [s, t]) => {
                config.icp.source = Some(s.clone());
                config.icp.target = Some(t.clone());
            }
            _ => return Err(Error::Config(format!("`--data` takes the wrong number of files for {command}"))),
        }
        let out = output_dir(self.output_dir.clone(), &config);
        Ok(Run { config, out })
    }
}

fn log_line(dir: &Path, command: &str, code: u8, started: Instant) {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let line = format!(
        "{stamp} {command} exit={code} elapsed_ms={}\n",
        started.elapsed().as_millis()
    );
    if std::fs::create_dir_all(dir).is_ok() {
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(dir.join("adakern.log")) {
            let _ = f.write_all(line.as_bytes());
        }
    }
}

/// Runs one parsed invocation and returns the exit code. Timestamps go to
/// `adakern.log` in the output directory, never into primary outputs.
pub fn run(cli: Cli) -> u8 {
    let started = Instant::now();
    let (name, result, log_dir): (&str, Result<u8>, Option<PathBuf>) = match cli.command {
        Command::PartitionTable(a) => {
            let dir = a.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
            let r = match &a.verify {
                Some(p) => commands::verify_table(p, a.tolerance),
                None => {
                    let path = a.output.clone().unwrap_or_else(|| dir.join("partition_table.txt"));
                    commands::build_table(&path, &a.grid.options())
                }
            };
            ("partition-table", r, a.output_dir)
        }
        Command::EstimateAlpha(a) => {
            let r = commands::estimate_alpha(&AlphaOptions {
                residuals: &a.residuals,
                scale: a.scale,
                table: a.table.as_deref(),
                grid: a.grid.options(),
                subsample_cap: a.subsample_cap,
                seed: a.seed,
                output: a.output.as_deref(),
            });
            ("estimate-alpha", r, None)
        }
        Command::Fit(a) => with_run("fit", &a, Run::fit),
        Command::Icp(a) => with_run("icp", &a, Run::icp),
        Command::Ba(a) => with_run("ba", &a, Run::ba),
        Command::BasinSweep(a) => {
            if let Some(n) = a.threads {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            with_run("basin-sweep", &a.run, Run::basin_sweep)
        }
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    if let Some(dir) = log_dir {
        log_line(&dir, name, code, started);
    }
    code
}

fn with_run(name: &'static str, args: &RunArgs, f: fn(&Run) -> Result<u8>) -> (&'static str, Result<u8>, Option<PathBuf>) {
    match args.resolve(name) {
        Ok(run) => {
            let dir = run.out.root().to_path_buf();
            (name, f(&run), Some(dir))
        }
        Err(e) => (name, Err(e), None),
    }
}

