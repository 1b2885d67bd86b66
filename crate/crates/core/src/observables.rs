//! Observables derived from joint densities: means, local means, local time
//! distributions, sampled events and cross-proposal metrics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bohm::counter_rng;
use crate::error::{Error, Result};
use crate::grid::{Capture, JointDistribution, TimeDistribution};
use crate::quadrature::trapezoid_weights;

/// Columns lighter than this have no defined local mean.
pub const MASS_FLOOR: f64 = 1e-12;

/// ∫ t Π(t) dt / ∫ Π(t) dt by trapezoid.
pub fn mean_arrival_time(td: &TimeDistribution) -> Result<f64> {
    let w = trapezoid_weights(&td.times);
    let mass: f64 = td.density.iter().zip(&w).map(|(p, w)| p * w).sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass { what: "time distribution".into() });
    }
    let m1: f64 = td.times.iter().zip(&td.density).zip(&w).map(|((t, p), w)| t * p * w).sum();
    Ok(m1 / mass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Fraction of the arriving mass inside the window, when known.
    pub capture: Option<Capture>,
}

/// Mean arrival time of a joint's time marginal, with its captured mass.
pub fn mean_report(jd: &JointDistribution) -> Result<MeanReport> {
    let td = jd.time_marginal();
    let mean = mean_arrival_time(&td)?;
    let w = trapezoid_weights(&td.times);
    let var: f64 = td
        .times
        .iter()
        .zip(&td.density)
        .zip(&w)
        .map(|((t, p), w)| (t - mean).powi(2) * p * w)
        .sum::<f64>()
        / td.total();
    Ok(MeanReport {
        mean_ms: mean,
        std_ms: var.sqrt(),
        capture: jd.capture.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalMeanCurve {
    pub screen_coords: Vec<f64>,
    pub mean_time: Vec<Option<f64>>,
    pub std_time: Vec<Option<f64>>,
    /// Probability carried by each coordinate's trapezoid cell.
    pub mass: Vec<f64>,
}

pub fn local_mean_arrival_time(jd: &JointDistribution) -> LocalMeanCurve {
    let wt = trapezoid_weights(&jd.grid.times);
    let ws = trapezoid_weights(&jd.grid.screen_coords);
    let times = &jd.grid.times;
    let stats: Vec<(f64, Option<f64>, Option<f64>)> = (0..jd.grid.n_coords())
        .into_par_iter()
        .map(|i| {
            let row = jd.row(i);
            let m0: f64 = row.iter().zip(&wt).map(|(p, w)| p * w).sum();
            let mass = m0 * ws[i];
            if !(mass > MASS_FLOOR) {
                return (mass, None, None);
            }
            let m1: f64 = row.iter().zip(&wt).zip(times).map(|((p, w), t)| p * w * t).sum::<f64>() / m0;
            let var: f64 = row
                .iter()
                .zip(&wt)
                .zip(times)
                .map(|((p, w), t)| p * w * (t - m1).powi(2))
                .sum::<f64>()
                / m0;
            (mass, Some(m1), Some(var.max(0.0).sqrt()))
        })
        .collect();
    LocalMeanCurve {
        screen_coords: jd.grid.screen_coords.clone(),
        mass: stats.iter().map(|s| s.0).collect(),
        mean_time: stats.iter().map(|s| s.1).collect(),
        std_time: stats.iter().map(|s| s.2).collect(),
    }
}

/// Time-integrated density along the screen, normalized. This integrates the
/// joint over time, not |ψ|² at a fixed instant.
pub fn cumulative_position(jd: &JointDistribution) -> Vec<f64> {
    let m = jd.position_marginal();
    let ws = trapezoid_weights(&jd.grid.screen_coords);
    let total: f64 = m.iter().zip(&ws).map(|(a, b)| a * b).sum();
    m.iter().map(|v| v / total).collect()
}

/// Default half-width of the probe strip, μm.
pub const PROBE_HALF_WIDTH: f64 = 125.0;

/// Arrival-time density conditioned on the strip [x − δ, x + δ].
pub fn local_time_distribution(jd: &JointDistribution, x: f64, half_width: f64) -> Result<TimeDistribution> {
    if !(half_width >= 0.0) {
        return Err(Error::invalid("half_width", "must be non-negative"));
    }
    let coords = &jd.grid.screen_coords;
    let ws = trapezoid_weights(coords);
    let nt = jd.grid.n_times();
    let mut acc = vec![0.0; nt];
    let mut rows = 0;
    for (i, &c) in coords.iter().enumerate() {
        if (c - x).abs() <= half_width {
            rows += 1;
            for (a, p) in acc.iter_mut().zip(jd.row(i)) {
                *a += ws[i] * p;
            }
        }
    }
    if rows == 0 {
        // strip narrower than the grid: nearest column
        let i = nearest(coords, x);
        acc.copy_from_slice(jd.row(i));
    }
    let wt = trapezoid_weights(&jd.grid.times);
    let mass: f64 = acc.iter().zip(&wt).map(|(a, w)| a * w).sum();
    if !(mass > MASS_FLOOR) {
        return Err(Error::ZeroMass {
            what: format!("strip at x = {x} μm"),
        });
    }
    TimeDistribution::normalized(jd.grid.times.clone(), acc)
}

fn nearest(axis: &[f64], x: f64) -> usize {
    let k = axis.partition_point(|&a| a < x);
    if k == 0 {
        0
    } else if k == axis.len() || x - axis[k - 1] <= axis[k] - x {
        k - 1
    } else {
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub n_total: u64,
    pub seed: u64,
}

impl Histogram {
    /// Counts values into half-open bins; the last bin is closed. Values off
    /// the edges are rejected so that Σcounts = n_total.
    pub fn from_values(values: &[f64], bin_edges: Vec<f64>, seed: u64) -> Result<Self> {
        if bin_edges.len() < 2 || bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("bin_edges", "need at least two increasing edges"));
        }
        let nb = bin_edges.len() - 1;
        let mut counts = vec![0u64; nb];
        for &v in values {
            if v < bin_edges[0] || v > bin_edges[nb] {
                return Err(Error::invalid("values", format!("{v} lies outside the bin edges")));
            }
            let k = bin_edges.partition_point(|&e| e <= v).saturating_sub(1).min(nb - 1);
            counts[k] += 1;
        }
        Ok(Histogram {
            bin_edges,
            counts,
            n_total: values.len() as u64,
            seed,
        })
    }

    pub fn density(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(self.bin_edges.windows(2))
            .map(|(c, w)| *c as f64 / (self.n_total as f64 * (w[1] - w[0])))
            .collect()
    }
}

/// Cell masses of the bilinear cells between grid nodes, row-major over
/// (coord cell, time cell).
pub fn cell_masses(jd: &JointDistribution) -> Vec<f64> {
    let xs = &jd.grid.screen_coords;
    let ts = &jd.grid.times;
    let nt = ts.len();
    let mut out = Vec::with_capacity((xs.len() - 1) * (nt - 1));
    for i in 0..xs.len() - 1 {
        let (r0, r1) = (jd.row(i), jd.row(i + 1));
        let dx = xs[i + 1] - xs[i];
        for j in 0..nt - 1 {
            let avg = 0.25 * (r0[j] + r0[j + 1] + r1[j] + r1[j + 1]);
            out.push(avg * dx * (ts[j + 1] - ts[j]));
        }
    }
    out
}

/// Inverse-CDF draws over grid cells with uniform jitter inside the cell.
pub fn sample_events(jd: &JointDistribution, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let cells = cell_masses(jd);
    let mut cdf = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for m in &cells {
        acc += m;
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::ZeroMass { what: "joint density".into() });
    }
    let xs = &jd.grid.screen_coords;
    let ts = &jd.grid.times;
    let ntc = ts.len() - 1;
    let mut rng = counter_rng(seed, 0);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let k = cdf.partition_point(|&c| c <= u).min(cells.len() - 1);
            let (i, j) = (k / ntc, k % ntc);
            let x = xs[i] + rng.random::<f64>() * (xs[i + 1] - xs[i]);
            let t = ts[j] + rng.random::<f64>() * (ts[j + 1] - ts[j]);
            (x, t)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    /// Compare even when a side has captured less than 0.999 of its mass.
    pub force: bool,
    /// Restrict local-mean metrics to this coordinate range.
    pub coord_range: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub a: String,
    pub b: String,
    pub tv_joint: f64,
    pub tv_time: f64,
    pub tv_position: f64,
    pub mean_a_ms: f64,
    pub mean_b_ms: f64,
    pub sup_local_mean_gap_ms: f64,
    pub sup_gap_coord: Option<f64>,
    /// Local mean of b minus a, per coordinate.
    pub column_shifts_ms: Vec<Option<f64>>,
    pub local_std_ms: Option<f64>,
    /// Events needed for the largest gap to reach 5σ.
    pub events_for_5sigma: Option<u64>,
    pub standard_error_at_1e4_ms: Option<f64>,
}

fn tv(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let na: f64 = a.iter().zip(w).map(|(v, w)| v * w).sum();
    let nb: f64 = b.iter().zip(w).map(|(v, w)| v * w).sum();
    0.5 * a.iter().zip(b).zip(w).map(|((x, y), w)| (x / na - y / nb).abs() * w).sum::<f64>()
}

/// Total variation between two normalized time distributions on one axis.
pub fn time_total_variation(a: &TimeDistribution, b: &TimeDistribution) -> Result<f64> {
    if a.times != b.times {
        return Err(Error::GridMismatch("time axes differ".into()));
    }
    Ok(tv(&a.density, &b.density, &trapezoid_weights(&a.times)))
}

pub fn compare(a: &JointDistribution, b: &JointDistribution, opts: &CompareOptions) -> Result<ComparisonMetrics> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch(format!("{} and {} use different grids", a.tag, b.tag)));
    }
    if !opts.force {
        for jd in [a, b] {
            if let Some(c) = &jd.capture {
                if c.fraction < 0.999 {
                    return Err(Error::InsufficientCapture { captured: c.fraction });
                }
            }
        }
    }
    let ws = trapezoid_weights(&a.grid.screen_coords);
    let wt = trapezoid_weights(&a.grid.times);
    let wj: Vec<f64> = ws.iter().flat_map(|x| wt.iter().map(move |t| x * t)).collect();
    let tv_joint = tv(&a.density, &b.density, &wj);
    let tv_time = time_total_variation(&a.time_marginal(), &b.time_marginal())?;
    let tv_position = tv(&a.position_marginal(), &b.position_marginal(), &ws);
    let la = local_mean_arrival_time(a);
    let lb = local_mean_arrival_time(b);
    let in_range = |x: f64| opts.coord_range.is_none_or(|r| x >= r[0] && x <= r[1]);
    let shifts: Vec<Option<f64>> = la
        .mean_time
        .iter()
        .zip(&lb.mean_time)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => Some(y - x),
            _ => None,
        })
        .collect();
    let mut sup = 0.0;
    let mut arg = None;
    for (i, s) in shifts.iter().enumerate() {
        if let Some(s) = s {
            if in_range(a.grid.screen_coords[i]) && s.abs() > sup {
                sup = s.abs();
                arg = Some(i);
            }
        }
    }
    let local_std = arg.and_then(|i| match (la.std_time[i], lb.std_time[i]) {
        (Some(x), Some(y)) => Some(x.max(y)),
        _ => None,
    });
    let events = match local_std {
        Some(s) if sup > 0.0 => Some((25.0 * s * s / (sup * sup)).ceil() as u64),
        _ => None,
    };
    Ok(ComparisonMetrics {
        a: a.tag.to_string(),
        b: b.tag.to_string(),
        tv_joint,
        tv_time,
        tv_position,
        mean_a_ms: mean_arrival_time(&a.time_marginal())?,
        mean_b_ms: mean_arrival_time(&b.time_marginal())?,
        sup_local_mean_gap_ms: sup,
        sup_gap_coord: arg.map(|i| a.grid.screen_coords[i]),
        column_shifts_ms: shifts,
        local_std_ms: local_std,
        events_for_5sigma: events,
        standard_error_at_1e4_ms: local_std.map(|s| s / 100.0),
    })
}
