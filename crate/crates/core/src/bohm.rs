//! Bohmian trajectories: equilibrium sampling, Dormand–Prince integration,
//! screen crossings and arrival histograms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{JointDistribution, Orientation, ProposalTag, ScreenGeometry, Source, SpaceTimeGrid};
use crate::model::TwoSlitState;
use crate::quadrature::trapezoid_weights;

/// Generator for sample `index` of stream `seed`.
pub fn counter_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Position of sample `index` drawn from |ψ(·, 0)|².
pub fn initial_position(st: &TwoSlitState, seed: u64, index: u64) -> (f64, f64) {
    let a = st.alpha();
    let mut rng = counter_rng(seed, index);
    let nx: f64 = rng.sample(StandardNormal);
    let upper = rng.random::<f64>() < 0.5;
    let ny: f64 = rng.sample(StandardNormal);
    let p = if upper { &st.transverse_up } else { &st.transverse_down };
    let x = st.longitudinal.center(0.0) + st.longitudinal.width(a, 0.0) * nx;
    let y = p.center(0.0) + p.width(a, 0.0) * ny;
    (x, y)
}

fn check_separated(st: &TwoSlitState) -> Result<()> {
    let a = st.alpha();
    let gap = (st.transverse_up.center(0.0) - st.transverse_down.center(0.0)).abs();
    if gap < 12.0 * st.transverse_up.width(a, 0.0) {
        return Err(Error::invalid(
            "sigma_y",
            "equilibrium sampling needs slit packets separated by >= 12 widths",
        ));
    }
    Ok(())
}

pub fn sample_initial_positions(st: &TwoSlitState, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    check_separated(st)?;
    Ok((0..n as u64).into_par_iter().map(|i| initial_position(st, seed, i)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub tol: f64,
    pub t_max: f64,
    /// Largest step in ms.
    pub h_max: f64,
    /// |Δy| per step as a fraction of the local fringe width.
    pub fringe_fraction: f64,
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub fn new(tol: f64, t_max: f64) -> Self {
        IntegratorConfig {
            tol,
            t_max,
            h_max: t_max / 50.0,
            fringe_fraction: 0.1,
            max_steps: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TimeLimit,
    FirstExit,
    OutOfDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed_index: u64,
    pub samples: Vec<TrajectorySample>,
    pub terminated: Termination,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegratorStats {
    pub steps: u64,
    pub rejections: u64,
    pub node_failures: u64,
    pub grazes: u64,
    /// Trajectories that cannot reach the screen and were not integrated.
    pub skipped: u64,
}

impl IntegratorStats {
    fn add(&mut self, o: &IntegratorStats) {
        self.steps += o.steps;
        self.rejections += o.rejections;
        self.node_failures += o.node_failures;
        self.grazes += o.grazes;
        self.skipped += o.skipped;
    }
}

struct Field<'a> {
    st: &'a TwoSlitState,
    alpha: f64,
    s: f64,
    sigma_y: f64,
    elapsed: f64,
}

impl<'a> Field<'a> {
    fn new(st: &'a TwoSlitState) -> Self {
        Field {
            st,
            alpha: st.alpha(),
            s: st.slit_half_separation(),
            sigma_y: st.transverse_up.sigma0,
            elapsed: st.transverse_up.elapsed,
        }
    }

    /// (vx, vy, ln|Y|²)
    #[inline]
    fn eval(&self, t: f64, x: f64, y: f64) -> (f64, f64, f64) {
        let vx = self.alpha * self.st.longitudinal.log_derivative(self.alpha, x, t).im;
        let (vy, ld) = self.st.transverse_velocity(y, t);
        (vx, vy, ld)
    }

    /// 2π/|Δk| of the two-slit fringes at time t.
    fn fringe_width(&self, t: f64) -> f64 {
        let tau = self.alpha * (t + self.elapsed) / (2.0 * self.sigma_y * self.sigma_y);
        let dk = self.s * tau / (self.sigma_y * self.sigma_y * (1.0 + tau * tau));
        if dk > 0.0 {
            2.0 * std::f64::consts::PI / dk
        } else {
            f64::INFINITY
        }
    }
}

// Dormand–Prince 5(4)
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates one trajectory, handing every accepted step (start, end) to
/// `on_step`; returning false from it stops the integration.
fn integrate_with(
    field: &Field,
    x0: f64,
    y0: f64,
    cfg: &IntegratorConfig,
    seed_index: u64,
    stats: &mut IntegratorStats,
    mut on_step: impl FnMut(&TrajectorySample, &TrajectorySample) -> bool,
) -> Result<Termination> {
    let atol = [cfg.tol * field.st.longitudinal.sigma0, cfg.tol * field.sigma_y];
    let (vx, vy, mut ld_max) = field.eval(0.0, x0, y0);
    let node_floor = (1e-30f64).ln();
    let mut cur = TrajectorySample { t: 0.0, x: x0, y: y0, vx, vy };
    let mut h = (1e-4f64).min(cfg.h_max);
    let mut k = [[0.0f64; 2]; 7];
    for _ in 0..cfg.max_steps {
        if cur.t >= cfg.t_max {
            return Ok(Termination::TimeLimit);
        }
        let clamp = cfg.fringe_fraction * field.fringe_width(cur.t) / cur.vy.abs().max(1e-300);
        h = h.min(clamp).min(cfg.h_max).min(cfg.t_max - cur.t);
        if h < 1e-14 * (1.0 + cur.t) {
            return Err(Error::StepUnderflow { t: cur.t });
        }
        k[0] = [cur.vx, cur.vy];
        let mut ld_new = 0.0;
        for s in 1..7 {
            let mut px = cur.x;
            let mut py = cur.y;
            for (j, kj) in k.iter().enumerate().take(s) {
                px += h * A[s][j] * kj[0];
                py += h * A[s][j] * kj[1];
            }
            let (fx, fy, ld) = field.eval(cur.t + C[s] * h, px, py);
            k[s] = [fx, fy];
            ld_new = ld;
        }
        // stage 7 is evaluated at the 5th-order solution
        let nx = cur.x + h * (0..6).map(|j| A[6][j] * k[j][0]).sum::<f64>();
        let ny = cur.y + h * (0..6).map(|j| A[6][j] * k[j][1]).sum::<f64>();
        let ex = h * (0..7).map(|j| E[j] * k[j][0]).sum::<f64>();
        let ey = h * (0..7).map(|j| E[j] * k[j][1]).sum::<f64>();
        let sx = atol[0] + cfg.tol * cur.x.abs().max(nx.abs());
        let sy = atol[1] + cfg.tol * cur.y.abs().max(ny.abs());
        let err = (0.5 * ((ex / sx).powi(2) + (ey / sy).powi(2))).sqrt();
        if !err.is_finite() {
            stats.rejections += 1;
            h *= 0.2;
            continue;
        }
        if err <= 1.0 {
            stats.steps += 1;
            if ld_new < ld_max + node_floor {
                return Err(Error::NodeProximity { seed_index, t: cur.t + h });
            }
            ld_max = ld_max.max(ld_new);
            let next = TrajectorySample {
                t: cur.t + h,
                x: nx,
                y: ny,
                vx: k[6][0],
                vy: k[6][1],
            };
            let keep_going = on_step(&cur, &next);
            cur = next;
            if !keep_going {
                return Ok(Termination::FirstExit);
            }
            if !(cur.x.is_finite() && cur.y.is_finite()) {
                return Ok(Termination::OutOfDomain);
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejections += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }
    Err(Error::StepUnderflow { t: cur.t })
}

pub fn integrate_trajectory(st: &TwoSlitState, x0: f64, y0: f64, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let field = Field::new(st);
    if st.density(x0, y0, 0.0) <= 0.0 {
        return Err(Error::invalid("initial position", "|ψ₀|² vanishes there"));
    }
    let mut stats = IntegratorStats::default();
    let mut samples = Vec::new();
    let term = integrate_with(&field, x0, y0, cfg, 0, &mut stats, |a, b| {
        if samples.is_empty() {
            samples.push(*a);
        }
        samples.push(*b);
        true
    })?;
    Ok(Trajectory {
        seed_index: 0,
        samples,
        terminated: term,
    })
}

/// Cubic Hermite interpolant between two samples: value and derivative.
pub fn hermite(a: &TrajectorySample, b: &TrajectorySample, t: f64, coord: Orientation) -> (f64, f64) {
    let (p0, p1, m0, m1) = match coord {
        Orientation::Vertical => (a.x, b.x, a.vx, b.vx),
        Orientation::Horizontal => (a.y, b.y, a.vy, b.vy),
    };
    let h = b.t - a.t;
    let s = (t - a.t) / h;
    let (s2, s3) = (s * s, s * s * s);
    let v = (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * h * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * h * m1;
    let d = ((6.0 * s2 - 6.0 * s) * p0 + (3.0 * s2 - 4.0 * s + 1.0) * h * m0 + (-6.0 * s2 + 6.0 * s) * p1 + (3.0 * s2 - 2.0 * s) * h * m1) / h;
    (v, d)
}

fn other(o: Orientation) -> Orientation {
    match o {
        Orientation::Vertical => Orientation::Horizontal,
        Orientation::Horizontal => Orientation::Vertical,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    pub x_screen: f64,
    pub t: f64,
    pub order: u16,
    pub direction: i8,
    pub seed_index: u64,
}

const GRAZE_SPEED: f64 = 1e-9;

enum Crossing {
    Event { t: f64, coord: f64, direction: i8 },
    Graze,
}

fn crossing_on_step(a: &TrajectorySample, b: &TrajectorySample, screen: &ScreenGeometry) -> Option<Crossing> {
    let ga = screen.signed_distance(a.x, a.y);
    let gb = screen.signed_distance(b.x, b.y);
    if (ga < 0.0) == (gb < 0.0) {
        return None;
    }
    let g = |t: f64| (hermite(a, b, t, screen.orientation).0 - screen.offset) * screen.normal_sign;
    let (mut lo, mut hi) = (a.t, b.t);
    let lo_neg = ga < 0.0;
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if (g(mid) < 0.0) == lo_neg {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    let vn = hermite(a, b, t, screen.orientation).1 * screen.normal_sign;
    if vn.abs() < GRAZE_SPEED {
        return Some(Crossing::Graze);
    }
    let coord = hermite(a, b, t, other(screen.orientation)).0;
    Some(Crossing::Event {
        t,
        coord,
        direction: if vn > 0.0 { 1 } else { -1 },
    })
}

/// Crossing events of a stored trajectory, ignoring grazes.
pub fn detect_crossings(traj: &Trajectory, screen: &ScreenGeometry) -> Vec<ArrivalEvent> {
    let mut out = Vec::new();
    for w in traj.samples.windows(2) {
        if let Some(Crossing::Event { t, coord, direction }) = crossing_on_step(&w[0], &w[1], screen) {
            out.push(ArrivalEvent {
                x_screen: coord,
                t,
                order: (out.len() + 1) as u16,
                direction,
                seed_index: traj.seed_index,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_trajectories: u64,
    pub seed: u64,
    pub tol: f64,
    pub t_max: f64,
    /// Stop each trajectory at its first crossing.
    pub first_exit_only: bool,
}

impl EnsembleConfig {
    pub fn new(n_trajectories: u64, seed: u64, screen: &ScreenGeometry) -> Self {
        let t_max = match screen.orientation {
            Orientation::Horizontal => 12.0,
            Orientation::Vertical => 150.0,
        };
        EnsembleConfig {
            n_trajectories,
            seed,
            tol: 1e-8,
            t_max,
            first_exit_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub events: Vec<ArrivalEvent>,
    pub n_trajectories: u64,
    pub rng_seed: u64,
    pub tol: f64,
    pub t_max: f64,
    pub stats: IntegratorStats,
}

/// Whether a trajectory starting at y0 can never reach the screen because
/// the mirror line y = 0 cannot be crossed.
fn unreachable(st: &TwoSlitState, screen: &ScreenGeometry, y0: f64) -> bool {
    let mirror = st.transverse_up.u == 0.0
        && st.transverse_down.u == 0.0
        && st.transverse_up.x0 == -st.transverse_down.x0;
    mirror && screen.orientation == Orientation::Horizontal && y0 * screen.offset <= 0.0
}

const CHUNK: u64 = 1024;

pub fn run_ensemble(st: &TwoSlitState, screen: &ScreenGeometry, cfg: &EnsembleConfig) -> Result<EnsembleResult> {
    check_separated(st)?;
    let field = Field::new(st);
    let icfg = IntegratorConfig::new(cfg.tol, cfg.t_max);
    let n_chunks = cfg.n_trajectories.div_ceil(CHUNK);
    let chunks: Vec<(Vec<ArrivalEvent>, IntegratorStats)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut events = Vec::new();
            let mut stats = IntegratorStats::default();
            let end = ((c + 1) * CHUNK).min(cfg.n_trajectories);
            for i in c * CHUNK..end {
                let (x0, y0) = initial_position(st, cfg.seed, i);
                if unreachable(st, screen, y0) {
                    stats.skipped += 1;
                    continue;
                }
                let start = events.len();
                let mut order = 0u16;
                let mut grazes = 0;
                let r = integrate_with(&field, x0, y0, &icfg, i, &mut stats, |a, b| match crossing_on_step(a, b, screen) {
                    None => true,
                    Some(Crossing::Graze) => {
                        grazes += 1;
                        true
                    }
                    Some(Crossing::Event { t, coord, direction }) => {
                        order += 1;
                        events.push(ArrivalEvent {
                            x_screen: coord,
                            t,
                            order,
                            direction,
                            seed_index: i,
                        });
                        !cfg.first_exit_only
                    }
                });
                stats.grazes += grazes;
                if let Err(Error::NodeProximity { .. }) = r {
                    // excluded together with any crossings it produced
                    events.truncate(start);
                    stats.node_failures += 1;
                } else {
                    r.map(|_| ())?;
                }
            }
            Ok((events, stats))
        })
        .collect::<Result<_>>()?;
    let mut stats = IntegratorStats::default();
    let mut events = Vec::new();
    for (e, s) in chunks {
        events.extend(e);
        stats.add(&s);
    }
    Ok(EnsembleResult {
        events,
        n_trajectories: cfg.n_trajectories,
        rng_seed: cfg.seed,
        tol: cfg.tol,
        t_max: cfg.t_max,
        stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFilter {
    First,
    All,
}

/// Node-centred histogram of events on `grid`, as a density.
pub fn histogram_joint(
    events: &[ArrivalEvent],
    grid: &SpaceTimeGrid,
    filter: EventFilter,
    min_mean_count: f64,
) -> Result<(JointDistribution, Vec<u64>)> {
    let counts = bin_events(events, grid, filter);
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    let total: u64 = counts.iter().sum();
    let selected = events.iter().filter(|e| filter == EventFilter::All || e.order == 1).count();
    let mean = if occupied > 0 { total as f64 / occupied as f64 } else { 0.0 };
    if mean < min_mean_count {
        return Err(Error::UnderSampled { mean_count: mean });
    }
    let ws = trapezoid_weights(&grid.screen_coords);
    let wt = trapezoid_weights(&grid.times);
    let nt = grid.n_times();
    let density: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 / (ws[k / nt] * wt[k % nt]))
        .collect();
    let tag = match filter {
        EventFilter::First => ProposalTag::Btc,
        EventFilter::All => ProposalTag::Qf,
    };
    let jd = JointDistribution::from_unnormalized(grid.clone(), density, tag, Source::MonteCarlo)?
        .with_capture(total as f64 / selected.max(1) as f64, "event count");
    Ok((jd, counts))
}

fn cell_index(axis: &[f64], v: f64) -> Option<usize> {
    let n = axis.len();
    if v < axis[0] || v > axis[n - 1] {
        return None;
    }
    let j = axis.partition_point(|&a| a < v);
    if j == 0 {
        return Some(0);
    }
    // nearest node
    Some(if v - axis[j - 1] <= axis[j] - v { j - 1 } else { j })
}

/// Event counts per grid node (row-major, rows = screen coordinate).
pub fn bin_events(events: &[ArrivalEvent], grid: &SpaceTimeGrid, filter: EventFilter) -> Vec<u64> {
    let nt = grid.n_times();
    let mut counts = vec![0u64; grid.n_coords() * nt];
    for e in events {
        if filter == EventFilter::First && e.order != 1 {
            continue;
        }
        if let (Some(i), Some(j)) = (cell_index(&grid.screen_coords, e.x_screen), cell_index(&grid.times, e.t)) {
            counts[i * nt + j] += 1;
        }
    }
    counts
}

pub fn truncated_joint(st: &TwoSlitState, screen: &ScreenGeometry, n: u64, grid: &SpaceTimeGrid, seed: u64) -> Result<JointDistribution> {
    let mut cfg = EnsembleConfig::new(n, seed, screen);
    cfg.first_exit_only = true;
    let res = run_ensemble(st, screen, &cfg)?;
    Ok(histogram_joint(&res.events, grid, EventFilter::First, 10.0)?.0)
}

pub fn all_arrival_joint_mc(st: &TwoSlitState, screen: &ScreenGeometry, n: u64, grid: &SpaceTimeGrid, seed: u64) -> Result<JointDistribution> {
    let cfg = EnsembleConfig::new(n, seed, screen);
    let res = run_ensemble(st, screen, &cfg)?;
    Ok(histogram_joint(&res.events, grid, EventFilter::All, 10.0)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventDumpHeader {
    pub format: String,
    pub byte_order: String,
    pub columns: Vec<(String, String, String)>,
    pub n_events: u64,
    pub n_trajectories: u64,
    pub rng_seed: u64,
    pub tol: f64,
    pub t_max: f64,
    pub stats: IntegratorStats,
}

/// Writes `<base>.bin` (columnar little-endian) and `<base>.json`.
pub fn write_event_dump(base: &Path, res: &EnsembleResult) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let bin = base.with_extension("bin");
    let json = base.with_extension("json");
    let ev = &res.events;
    let mut buf = Vec::with_capacity(ev.len() * 27);
    ev.iter().for_each(|e| buf.extend_from_slice(&e.seed_index.to_le_bytes()));
    ev.iter().for_each(|e| buf.extend_from_slice(&e.order.to_le_bytes()));
    ev.iter().for_each(|e| buf.extend_from_slice(&e.direction.to_le_bytes()));
    ev.iter().for_each(|e| buf.extend_from_slice(&e.t.to_le_bytes()));
    ev.iter().for_each(|e| buf.extend_from_slice(&e.x_screen.to_le_bytes()));
    std::fs::File::create(&bin)?.write_all(&buf)?;
    let col = |n: &str, ty: &str, unit: &str| (n.to_string(), ty.to_string(), unit.to_string());
    let header = EventDumpHeader {
        format: "columnar".into(),
        byte_order: "little".into(),
        columns: vec![
            col("seed_index", "u64", "1"),
            col("order", "u16", "1"),
            col("direction", "i8", "1"),
            col("t", "f64", "ms"),
            col("x", "f64", "um"),
        ],
        n_events: ev.len() as u64,
        n_trajectories: res.n_trajectories,
        rng_seed: res.rng_seed,
        tol: res.tol,
        t_max: res.t_max,
        stats: res.stats,
    };
    std::fs::write(&json, serde_json::to_string_pretty(&header).map_err(|e| Error::Io(e.to_string()))?)?;
    Ok((bin, json))
}

pub fn read_event_dump(base: &Path) -> Result<(EventDumpHeader, Vec<ArrivalEvent>)> {
    let header: EventDumpHeader = serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)
        .map_err(|e| Error::Io(e.to_string()))?;
    let mut raw = Vec::new();
    std::fs::File::open(base.with_extension("bin"))?.read_to_end(&mut raw)?;
    let n = header.n_events as usize;
    if raw.len() != n * 27 {
        return Err(Error::Io(format!("event dump has {} bytes, expected {}", raw.len(), n * 27)));
    }
    let (s, rest) = raw.split_at(8 * n);
    let (o, rest) = rest.split_at(2 * n);
    let (d, rest) = rest.split_at(n);
    let (t, x) = rest.split_at(8 * n);
    let events = (0..n)
        .map(|i| ArrivalEvent {
            seed_index: u64::from_le_bytes(s[8 * i..8 * i + 8].try_into().unwrap()),
            order: u16::from_le_bytes(o[2 * i..2 * i + 2].try_into().unwrap()),
            direction: d[i] as i8,
            t: f64::from_le_bytes(t[8 * i..8 * i + 8].try_into().unwrap()),
            x_screen: f64::from_le_bytes(x[8 * i..8 * i + 8].try_into().unwrap()),
        })
        .collect();
    Ok((header, events))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianPacket1D, UnitSystem};
    use statrs::distribution::{ContinuousCDF, Normal};

    fn single_slit() -> TwoSlitState {
        let p = GaussianPacket1D::new(0.0, 0.0, 0.5).unwrap();
        TwoSlitState::new(GaussianPacket1D::new(0.0, 3000.0, 0.04).unwrap(), p, p, UnitSystem::helium()).unwrap()
    }

    #[test]
    fn sampler_is_counter_based() {
        let st = TwoSlitState::paper_default();
        let all = sample_initial_positions(&st, 100, 7).unwrap();
        assert_eq!(all[42], initial_position(&st, 7, 42));
        assert_ne!(all[42], initial_position(&st, 8, 42));
    }

    #[test]
    fn sampler_moments() {
        let st = TwoSlitState::paper_default();
        let n = 100_000;
        let s = sample_initial_positions(&st, n, 1).unwrap();
        let mean_y = s.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let mix_std = (100.0f64 + 0.25).sqrt();
        assert!(mean_y.abs() < 4.0 * mix_std / (n as f64).sqrt());
        let up = s.iter().filter(|p| p.1 > 0.0).count() as f64 / n as f64;
        assert!((up - 0.5).abs() < 0.007);
        let mut xs: Vec<f64> = s.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        let g = Normal::new(0.0, 0.04).unwrap();
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = g.cdf(x);
                (c - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.63 / (n as f64).sqrt(), "{ks}");
    }

    #[test]
    fn single_gaussian_trajectory_follows_spreading_law() {
        let st = single_slit();
        let a = st.alpha();
        let cfg = IntegratorConfig::new(1e-10, 3.0);
        for &y0 in &[0.3, -0.8, 1.1] {
            let tr = integrate_trajectory(&st, 0.01, y0, &cfg).unwrap();
            for s in tr.samples.iter().step_by(5) {
                let want = y0 * st.transverse_up.width(a, s.t) / 0.5;
                assert!((s.y - want).abs() <= 1e-6 * want.abs(), "t={} {} {}", s.t, s.y, want);
                let wx = 3000.0 * s.t + 0.01 * st.longitudinal.width(a, s.t) / 0.04;
                assert!((s.x - wx).abs() <= 1e-6 * wx.abs());
            }
        }
    }

    #[test]
    fn mirror_trajectories_stay_mirrored() {
        let st = TwoSlitState::paper_default();
        let cfg = IntegratorConfig::new(1e-8, 4.0);
        for &y0 in &[9.6, 10.4, 10.9, 9.2] {
            let a = integrate_trajectory(&st, 0.0, y0, &cfg).unwrap();
            let b = integrate_trajectory(&st, 0.0, -y0, &cfg).unwrap();
            assert_eq!(a.samples.len(), b.samples.len());
            for (p, q) in a.samples.iter().zip(&b.samples) {
                assert!((p.y + q.y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hermite_reproduces_cubic() {
        let f = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let df = |t: f64| 2.0 - 2.0 * t + 1.5 * t * t;
        let a = TrajectorySample { t: 0.5, x: 0.0, y: f(0.5), vx: 0.0, vy: df(0.5) };
        let b = TrajectorySample { t: 1.3, x: 0.0, y: f(1.3), vx: 0.0, vy: df(1.3) };
        let (v, d) = hermite(&a, &b, 0.9, Orientation::Horizontal);
        assert!((v - f(0.9)).abs() < 1e-13);
        assert!((d - df(0.9)).abs() < 1e-12);
    }

    #[test]
    fn monotone_crossing_gives_one_event() {
        let st = single_slit();
        let cfg = IntegratorConfig::new(1e-9, 2.0);
        let tr = integrate_trajectory(&st, 0.0, 0.4, &cfg).unwrap();
        let screen = ScreenGeometry::horizontal(10.0, [-1e6, 1e6]).unwrap();
        let ev = detect_crossings(&tr, &screen);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].direction, 1);
        // y(t) = 0.4·σ(t)/σ0 = 10
        let a = st.alpha();
        let tau = ((10.0f64 / 0.4).powi(2) - 1.0).sqrt();
        let t_hit = tau * 2.0 * 0.25 / a;
        assert!((ev[0].t - t_hit).abs() < 1e-6, "{} {t_hit}", ev[0].t);
    }

    #[test]
    fn event_dump_round_trip() {
        let res = EnsembleResult {
            events: vec![
                ArrivalEvent { x_screen: 1.5, t: 0.25, order: 1, direction: 1, seed_index: 3 },
                ArrivalEvent { x_screen: -2.0, t: 0.5, order: 2, direction: -1, seed_index: 3 },
            ],
            n_trajectories: 10,
            rng_seed: 5,
            tol: 1e-8,
            t_max: 12.0,
            stats: IntegratorStats::default(),
        };
        let dir = std::env::temp_dir().join(format!("qarrival-dump-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("events");
        write_event_dump(&base, &res).unwrap();
        let (h, ev) = read_event_dump(&base).unwrap();
        assert_eq!(h.n_events, 2);
        assert_eq!(ev, res.events);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn node_centred_binning() {
        let grid = SpaceTimeGrid::uniform([0.0, 2.0], 3, [0.0, 1.0], 2).unwrap();
        let e = |x, t, order| ArrivalEvent { x_screen: x, t, order, direction: 1, seed_index: 0 };
        let ev = [e(0.4, 0.2, 1), e(0.6, 0.9, 2), e(2.5, 0.5, 1)];
        let all = bin_events(&ev, &grid, EventFilter::All);
        assert_eq!(all, vec![1, 0, 0, 1, 0, 0]);
        let first = bin_events(&ev, &grid, EventFilter::First);
        assert_eq!(first, vec![1, 0, 0, 0, 0, 0]);
    }
}
