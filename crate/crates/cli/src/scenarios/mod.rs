//! Named scenarios. Each one writes its products under `<out>/<name>/`,
//! returns a typed report (also written as `metrics.json`) and appends a
//! record to `<out>/manifest.json`.

mod backaction;
mod intrinsic;
mod trajectories;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use qarrival_core::observables::{mean_report, ComparisonMetrics};
use qarrival_core::{JointDistribution, ProposalTag};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{code_version, ErrorRecord, Products, RunManifest, RunRecord};

pub use backaction::{BackactionReport, BtcSummary, SweepPoint, SweepReport};
pub use intrinsic::{GraySummary, HorizontalReport, HorizontalScreenReport, ProbeSummary, VerticalReport, VerticalScreenReport};
pub use trajectories::{Gap, TrajectoryReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Vertical,
    Horizontal,
    Trajectories,
    Backaction,
    Sweep,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Vertical,
        Scenario::Horizontal,
        Scenario::Trajectories,
        Scenario::Backaction,
        Scenario::Sweep,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Vertical => "vertical",
            Scenario::Horizontal => "horizontal",
            Scenario::Trajectories => "trajectories",
            Scenario::Backaction => "backaction",
            Scenario::Sweep => "sweep",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Scenario::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|c| c.as_str()).collect();
            CliError::Config(format!("unknown scenario `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum Report {
    Vertical(VerticalReport),
    Horizontal(HorizontalReport),
    Trajectories(TrajectoryReport),
    Backaction(BackactionReport),
    Sweep(SweepReport),
}

/// Wall-clock time per named stage.
#[derive(Default)]
pub(crate) struct Timer {
    pub stages: BTreeMap<String, f64>,
}

impl Timer {
    pub fn stage<T>(&mut self, name: impl Into<String>, f: impl FnOnce() -> T) -> T {
        let t0 = Instant::now();
        let out = f();
        *self.stages.entry(name.into()).or_default() += t0.elapsed().as_secs_f64();
        out
    }

    /// Adds the time since `t0` to a stage.
    pub fn record(&mut self, name: impl Into<String>, t0: Instant) {
        *self.stages.entry(name.into()).or_default() += t0.elapsed().as_secs_f64();
    }
}

pub(crate) struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub products: Products,
    pub timer: Timer,
}

/// Runs one scenario inside a worker pool of `cfg.threads` threads.
pub fn run_scenario(scenario: Scenario, cfg: &ExperimentConfig, out: &Path, command: &str) -> CliResult<(Report, RunRecord)> {
    cfg.validate().map_err(|(f, r)| CliError::Config(format!("{f}: {r}")))?;
    let threads = cfg.threads.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let t0 = Instant::now();
    let mut ctx = Ctx {
        cfg,
        products: Products::new(out, scenario.as_str())?,
        timer: Timer::default(),
    };
    let result = pool.install(|| match scenario {
        Scenario::Vertical => intrinsic::vertical(&mut ctx).map(Report::Vertical),
        Scenario::Horizontal => intrinsic::horizontal(&mut ctx).map(Report::Horizontal),
        Scenario::Trajectories => trajectories::run(&mut ctx).map(Report::Trajectories),
        Scenario::Backaction => backaction::run(&mut ctx).map(Report::Backaction),
        Scenario::Sweep => backaction::sweep(&mut ctx).map(Report::Sweep),
    });
    let result = result.and_then(|r| {
        ctx.products.json("metrics.json", &r)?;
        Ok(r)
    });
    let error = match &result {
        Ok(_) => None,
        Err(e) => {
            let rec = ErrorRecord::from(e);
            // best effort: the manifest still records the failure
            let _ = ctx.products.json("error.json", &rec);
            Some(rec)
        }
    };
    let record = RunRecord {
        command: command.to_string(),
        scenario: scenario.as_str().into(),
        code_version: code_version(),
        config: cfg.clone(),
        threads,
        started_unix_s: started,
        wall_clock_s: t0.elapsed().as_secs_f64(),
        timings_s: ctx.timer.stages,
        products: ctx.products.list,
        error,
    };
    RunManifest::append(out, record.clone())?;
    result.map(|r| (r, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSummary {
    pub tag: ProposalTag,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Fraction of the arrival mass inside the window, when known.
    pub capture: Option<f64>,
}

pub(crate) fn summarize(jd: &JointDistribution) -> CliResult<ProposalSummary> {
    let m = mean_report(jd)?;
    Ok(ProposalSummary {
        tag: jd.tag,
        mean_ms: m.mean_ms,
        std_ms: m.std_ms,
        capture: m.capture.map(|c| c.fraction),
    })
}

/// Scalar part of a comparison; the per-column shifts go to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSummary {
    pub a: String,
    pub b: String,
    pub tv_joint: f64,
    pub tv_time: f64,
    pub tv_position: f64,
    pub mean_a_ms: f64,
    pub mean_b_ms: f64,
    pub sup_local_mean_gap_ms: f64,
    pub sup_gap_coord_um: Option<f64>,
    /// Compared although a side captured less than 0.999 of its mass.
    pub forced: bool,
}

impl PairSummary {
    pub fn new(m: &ComparisonMetrics, forced: bool) -> Self {
        PairSummary {
            a: m.a.clone(),
            b: m.b.clone(),
            tv_joint: m.tv_joint,
            tv_time: m.tv_time,
            tv_position: m.tv_position,
            mean_a_ms: m.mean_a_ms,
            mean_b_ms: m.mean_b_ms,
            sup_local_mean_gap_ms: m.sup_local_mean_gap_ms,
            sup_gap_coord_um: m.sup_gap_coord,
            forced,
        }
    }
}

/// sup|a − b| / max(sup a, sup b) for two densities on one axis.
pub fn sup_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let peak = a.iter().chain(b).fold(0.0f64, |m, v| m.max(*v));
    let gap = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if peak > 0.0 {
        gap / peak
    } else {
        0.0
    }
}

pub(crate) fn mm_label(prefix: &str, um: f64) -> String {
    format!("{prefix}{}", um_to_label(um))
}

fn um_to_label(um: f64) -> String {
    if um >= 1000.0 {
        format!("{}mm", um / 1000.0)
    } else {
        format!("{um}um")
    }
}
