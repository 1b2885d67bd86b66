//! Experiment configuration. Every field has a default, so an empty file
//! gives the default helium two-slit setup.

use std::path::{Path, PathBuf};

use qarrival_core::backaction::PabWavefunction;
use qarrival_core::model::SlitParameters;
use qarrival_core::{ProposalTag, TwoSlitState, UnitSystem};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Scenario run when none is given on the command line.
    pub scenario: Option<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub state: StateConfig,
    pub vertical: VerticalConfig,
    pub horizontal: HorizontalConfig,
    pub trajectories: TrajectoryConfig,
    pub backaction: BackactionConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: None,
            seed: 1,
            threads: None,
            out: None,
            state: StateConfig::default(),
            vertical: VerticalConfig::default(),
            horizontal: HorizontalConfig::default(),
            trajectories: TrajectoryConfig::default(),
            backaction: BackactionConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Lengths in μm, velocities in μm/ms (= mm/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    /// Particle mass in kg; helium-4 when neither this nor `alpha` is set.
    pub mass_kg: Option<f64>,
    /// ħ/m in μm²/ms; overrides `mass_kg`.
    pub alpha: Option<f64>,
    pub s: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub x0: f64,
}

impl Default for StateConfig {
    fn default() -> Self {
        let p = SlitParameters::default();
        StateConfig {
            mass_kg: None,
            alpha: None,
            s: p.s,
            sigma_x: p.sigma_x,
            sigma_y: p.sigma_y,
            u_x: p.u_x,
            u_y: p.u_y,
            x0: p.x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerticalConfig {
    /// Screen distances in μm.
    pub l_x: Vec<f64>,
    pub span: [f64; 2],
    pub n_coords: usize,
    /// Time window in ms; [0.7, 1.4]·L/u_x when absent.
    pub window: Option<[f64; 2]>,
    pub n_times: usize,
    pub proposals: Vec<ProposalTag>,
}

impl Default for VerticalConfig {
    fn default() -> Self {
        VerticalConfig {
            l_x: vec![300_000.0],
            span: [-15_000.0, 15_000.0],
            n_coords: 3001,
            window: None,
            n_times: 6001,
            proposals: vec![ProposalTag::Sc, ProposalTag::Std, ProposalTag::Qf],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizontalConfig {
    pub l_y: Vec<f64>,
    pub span: [f64; 2],
    pub n_coords: usize,
    pub window: [f64; 2],
    pub n_times: usize,
    pub proposals: Vec<ProposalTag>,
    /// Probe points for local time distributions, mm.
    pub probes_mm: Vec<f64>,
    /// Half-width of each probe strip, μm.
    pub probe_half_width: f64,
    /// Range searched for the largest local-mean gap, mm.
    pub gray_region_mm: [f64; 2],
    /// Events drawn per proposal at each probe for the sampled histograms.
    pub samples: usize,
}

impl Default for HorizontalConfig {
    fn default() -> Self {
        HorizontalConfig {
            l_y: vec![15.0, 20.0, 25.0, 30.0],
            span: [0.0, 30_000.0],
            n_coords: 3001,
            window: [0.0, 12.0],
            n_times: 6001,
            proposals: vec![ProposalTag::Sc, ProposalTag::Std, ProposalTag::Qf],
            probes_mm: vec![16.2, 17.4, 18.4, 19.2],
            probe_half_width: 125.0,
            gray_region_mm: [16.2, 19.2],
            samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub n: u64,
    /// Count used by `--paper-scale`.
    pub paper_scale_n: u64,
    pub l_y: f64,
    pub tol: f64,
    pub t_max: f64,
    pub span: [f64; 2],
    /// Histogram grid for the joint comparison.
    pub n_coords: usize,
    pub n_times: usize,
    /// Time refinement of the analytic reference inside each histogram cell.
    pub refine: usize,
    pub bootstrap: usize,
    /// Bin width of the local gap analysis, ms.
    pub gap_bin_ms: f64,
    /// Minimum events per column for the local-mean check.
    pub min_column_events: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            n: 100_000,
            paper_scale_n: 100_000_000,
            l_y: 15.0,
            tol: 1e-8,
            t_max: 12.0,
            span: [0.0, 45_000.0],
            n_coords: 181,
            n_times: 121,
            refine: 20,
            bootstrap: 200,
            gap_bin_ms: 0.02,
            min_column_events: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackactionConfig {
    pub l_y: f64,
    /// Detector wavenumber κ, μm⁻¹.
    pub kappa: f64,
    /// PAB length λ, μm.
    pub lambda: f64,
    pub t_max: f64,
    /// CN step in ms; solver default when absent.
    pub dt: Option<f64>,
    /// CN spacing in μm; solver default when absent.
    pub dy: Option<f64>,
    pub pab_wavefunction: PabWavefunction,
    pub kappa_sweep: Vec<f64>,
    pub lambda_sweep: Vec<f64>,
    pub span: [f64; 2],
    pub n_coords: usize,
    pub n_times: usize,
    /// Also run the first-arrival trajectory ensemble (BTC).
    pub btc: bool,
    /// Where the ABR and PAB position marginals are compared, mm.
    pub compare_at_mm: f64,
}

impl Default for BackactionConfig {
    fn default() -> Self {
        BackactionConfig {
            l_y: 15.0,
            kappa: 1.0,
            lambda: 1.0,
            t_max: 12.0,
            dt: None,
            dy: None,
            pab_wavefunction: PabWavefunction::Dirichlet,
            kappa_sweep: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            lambda_sweep: vec![0.5, 1.0, 2.0],
            span: [0.0, 30_000.0],
            n_coords: 3001,
            n_times: 6001,
            btc: true,
            compare_at_mm: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub write_joints: bool,
    /// Joint CSVs are decimated to at most this many nodes.
    pub max_joint_nodes: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            write_joints: true,
            max_joint_nodes: 250_000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate().map_err(|(field, reason)| {
            let line = find_line(text, field).map(|l| format!(" (line {l})")).unwrap_or_default();
            CliError::Config(format!("{field}{line}: {reason}"))
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn units(&self) -> UnitSystem {
        match (self.state.alpha, self.state.mass_kg) {
            (Some(a), _) => UnitSystem::from_alpha(a).expect("validated"),
            (None, Some(m)) => UnitSystem::from_mass(m).expect("validated"),
            (None, None) => UnitSystem::helium(),
        }
    }

    pub fn build_state(&self) -> Result<TwoSlitState, CliError> {
        let s = &self.state;
        let p = SlitParameters {
            s: s.s,
            sigma_x: s.sigma_x,
            sigma_y: s.sigma_y,
            u_x: s.u_x,
            u_y: s.u_y,
            x0: s.x0,
        };
        TwoSlitState::from_parameters(&p, self.units()).map_err(|e| CliError::Config(format!("state: {e}")))
    }

    /// Checks physical ranges; the error names the offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        fn positive(field: &'static str, v: f64) -> Result<(), (&'static str, String)> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err((field, format!("must be positive, got {v}")))
            }
        }
        fn finite(field: &'static str, v: f64) -> Result<(), (&'static str, String)> {
            if v.is_finite() {
                Ok(())
            } else {
                Err((field, format!("must be finite, got {v}")))
            }
        }
        fn span(field: &'static str, s: [f64; 2]) -> Result<(), (&'static str, String)> {
            if s[0].is_finite() && s[1].is_finite() && s[1] > s[0] {
                Ok(())
            } else {
                Err((field, format!("needs lower < upper, got {s:?}")))
            }
        }
        fn count(field: &'static str, n: usize, min: usize) -> Result<(), (&'static str, String)> {
            if n >= min {
                Ok(())
            } else {
                Err((field, format!("must be at least {min}, got {n}")))
            }
        }
        let st = &self.state;
        if let Some(m) = st.mass_kg {
            positive("state.mass_kg", m)?;
        }
        if let Some(a) = st.alpha {
            positive("state.alpha", a)?;
        }
        positive("state.s", st.s)?;
        positive("state.sigma_x", st.sigma_x)?;
        positive("state.sigma_y", st.sigma_y)?;
        finite("state.u_x", st.u_x)?;
        finite("state.u_y", st.u_y)?;
        finite("state.x0", st.x0)?;
        if self.threads == Some(0) {
            return Err(("threads", "must be at least 1".into()));
        }

        let v = &self.vertical;
        for &l in &v.l_x {
            positive("vertical.l_x", l)?;
        }
        span("vertical.span", v.span)?;
        if let Some(w) = v.window {
            span("vertical.window", w)?;
        }
        count("vertical.n_coords", v.n_coords, 2)?;
        count("vertical.n_times", v.n_times, 2)?;
        check_intrinsic("vertical.proposals", &v.proposals)?;

        let h = &self.horizontal;
        for &l in &h.l_y {
            positive("horizontal.l_y", l)?;
        }
        span("horizontal.span", h.span)?;
        span("horizontal.window", h.window)?;
        if h.window[0] < 0.0 {
            return Err(("horizontal.window", "must start at t >= 0".into()));
        }
        count("horizontal.n_coords", h.n_coords, 2)?;
        count("horizontal.n_times", h.n_times, 2)?;
        check_intrinsic("horizontal.proposals", &h.proposals)?;
        positive("horizontal.probe_half_width", h.probe_half_width)?;
        span("horizontal.gray_region_mm", h.gray_region_mm)?;

        let t = &self.trajectories;
        count("trajectories.n", t.n as usize, 1)?;
        positive("trajectories.l_y", t.l_y)?;
        positive("trajectories.tol", t.tol)?;
        positive("trajectories.t_max", t.t_max)?;
        span("trajectories.span", t.span)?;
        count("trajectories.n_coords", t.n_coords, 2)?;
        count("trajectories.n_times", t.n_times, 2)?;
        count("trajectories.refine", t.refine, 2)?;
        if !t.refine.is_multiple_of(2) {
            return Err(("trajectories.refine", format!("must be even, got {}", t.refine)));
        }
        positive("trajectories.gap_bin_ms", t.gap_bin_ms)?;

        let b = &self.backaction;
        positive("backaction.l_y", b.l_y)?;
        positive("backaction.kappa", b.kappa)?;
        positive("backaction.lambda", b.lambda)?;
        positive("backaction.t_max", b.t_max)?;
        if let Some(dt) = b.dt {
            positive("backaction.dt", dt)?;
        }
        if let Some(dy) = b.dy {
            positive("backaction.dy", dy)?;
        }
        for &k in &b.kappa_sweep {
            positive("backaction.kappa_sweep", k)?;
        }
        for &l in &b.lambda_sweep {
            positive("backaction.lambda_sweep", l)?;
        }
        span("backaction.span", b.span)?;
        count("backaction.n_coords", b.n_coords, 2)?;
        count("backaction.n_times", b.n_times, 2)?;
        count("output.max_joint_nodes", self.output.max_joint_nodes, 4)?;
        Ok(())
    }
}

fn check_intrinsic(field: &'static str, tags: &[ProposalTag]) -> Result<(), (&'static str, String)> {
    for t in tags {
        if !matches!(t, ProposalTag::Sc | ProposalTag::Std | ProposalTag::Qf) {
            return Err((field, format!("{t} is not an intrinsic proposal (use SC, STD or QF)")));
        }
    }
    if tags.is_empty() {
        return Err((field, "needs at least one proposal".into()));
    }
    Ok(())
}

/// Line of `key` inside `[table]` for a dotted field name, 1-based.
fn find_line(text: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (Some(t), k),
        None => (None, field),
    };
    let mut current: Option<String> = None;
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if let Some(name) = l.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            continue;
        }
        let in_table = match table {
            Some(t) => current.as_deref() == Some(t),
            None => current.is_none(),
        };
        if in_table && l.split('=').next().map(str::trim) == Some(key) {
            return Some(i + 1);
        }
    }
    None
}
