//! Experiment driver for the two-slit arrival-time toolkit.

pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qarrival_core::observables::{compare, CompareOptions};

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use output::{load_joint, RunManifest, RunRecord};
pub use scenarios::{run_scenario, Report, Scenario};

#[derive(Debug, Parser)]
#[command(name = "qarrival", version, about = "Arrival-time distributions behind a double slit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario: vertical, horizontal, trajectories, backaction or sweep.
    Run {
        /// Taken from the config's `scenario` key when omitted.
        scenario: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare two joint-density CSVs written by `run`.
    Compare {
        file_a: PathBuf,
        file_b: PathBuf,
        /// Compare even if a side captured less than 0.999 of its mass.
        #[arg(long)]
        force: bool,
        /// Restrict local-mean metrics to this coordinate range, um.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        range: Option<Vec<f64>>,
        /// Write the metrics JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Absorption against the detector parameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    /// ABR detector wavenumber, 1/um.
    Kappa,
    /// PAB length, um.
    Lambda,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML config; an empty file means the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output root (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Number of Bohmian trajectories.
    #[arg(long)]
    pub trajectories: Option<u64>,
    /// Use `trajectories.paper_scale_n` (1e8 by default) trajectories.
    #[arg(long)]
    pub paper_scale: bool,
}

impl Common {
    /// Config file plus command-line overrides.
    pub fn resolve(&self) -> CliResult<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if self.paper_scale {
            cfg.trajectories.n = cfg.trajectories.paper_scale_n;
        }
        if let Some(n) = self.trajectories {
            cfg.trajectories.n = n;
        }
        let out = self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        cfg.validate().map_err(|(f, r)| CliError::Config(format!("{f}: {r}")))?;
        Ok((cfg, out))
    }
}

fn run_compare(a: &Path, b: &Path, force: bool, range: Option<Vec<f64>>, out: Option<&Path>) -> CliResult<String> {
    let (ja, _) = load_joint(a)?;
    let (jb, _) = load_joint(b)?;
    let coord_range = match range.as_deref() {
        None => None,
        Some([lo, hi]) if hi > lo => Some([*lo, *hi]),
        Some(r) => return Err(CliError::Config(format!("--range needs LO < HI, got {r:?}"))),
    };
    let m = compare(&ja, &jb, &CompareOptions { force, coord_range })?;
    let text = serde_json::to_string_pretty(&m)? + "\n";
    if let Some(p) = out {
        std::fs::write(p, &text)?;
    }
    Ok(text)
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { scenario, common } => {
            let (cfg, out) = common.resolve()?;
            let name = scenario
                .or_else(|| cfg.scenario.clone())
                .ok_or_else(|| CliError::Config("no scenario given on the command line or in the config".into()))?;
            let sc: Scenario = name.parse()?;
            let (report, rec) = run_scenario(sc, &cfg, &out, "run")?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            eprintln!("{} products written to {} in {:.1} s", rec.products.len(), out.join(sc.as_str()).display(), rec.wall_clock_s);
        }
        Command::Compare {
            file_a,
            file_b,
            force,
            range,
            out,
        } => {
            let text = run_compare(&file_a, &file_b, force, range, out.as_deref())?;
            if out.is_none() {
                print!("{text}");
            }
        }
        Command::Sweep { param, values, common } => {
            let (mut cfg, out) = common.resolve()?;
            match param {
                SweepParam::Kappa => {
                    cfg.backaction.kappa_sweep = values;
                    cfg.backaction.lambda_sweep.clear();
                }
                SweepParam::Lambda => {
                    cfg.backaction.lambda_sweep = values;
                    cfg.backaction.kappa_sweep.clear();
                }
            }
            let (report, _) = run_scenario(Scenario::Sweep, &cfg, &out, "sweep")?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
