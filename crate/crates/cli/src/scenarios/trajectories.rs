//! Bohmian ensemble on the horizontal screen against the analytic flux.

use qarrival_core::bohm::{bin_events, counter_rng, histogram_joint, run_ensemble, write_event_dump, ArrivalEvent, EnsembleConfig, EventFilter, IntegratorStats};
use qarrival_core::grid::linspace;
use qarrival_core::intrinsic::flux_joint;
use qarrival_core::observables::{compare, CompareOptions};
use qarrival_core::quadrature::trapezoid_weights;
use qarrival_core::{JointDistribution, ProposalTag, ScreenGeometry, Source, SpaceTimeGrid};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mm_label, Ctx};
use crate::error::CliResult;

/// Probe strip of the gap analysis: centre and half-width in μm.
const GAP_PROBE: (f64, f64) = (19_200.0, 125.0);
const GAP_ALPHA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub t_start_ms: f64,
    pub t_end_ms: f64,
    pub bins: usize,
    /// All-arrival events inside the gap.
    pub all_count: u64,
    /// Chance of no first arrival among them at the probe's first/all ratio.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub n_trajectories: u64,
    pub l_y_um: f64,
    pub events_all: u64,
    pub events_first: u64,
    pub stats: IntegratorStats,
    /// Total variation between the all-arrival histogram and the analytic
    /// flux density averaged over the same cells.
    pub tv_mc_vs_flux: f64,
    /// Mean TV of Poisson-bootstrap resamples against the parent histogram.
    pub bootstrap_tv_mean: f64,
    pub bootstrap_tv_std: f64,
    pub bootstrap_replicates: usize,
    pub columns_eligible: usize,
    pub columns_within_2sigma: usize,
    pub columns_beyond_4sigma: usize,
    pub max_abs_z: f64,
    pub gap_probe_mm: [f64; 2],
    pub gap_bin_ms: f64,
    pub gaps: Vec<Gap>,
    /// Grid cells and probe bins where first arrivals exceed all arrivals.
    pub first_exceeds_all: usize,
}

impl TrajectoryReport {
    pub fn fraction_within_2sigma(&self) -> f64 {
        if self.columns_eligible == 0 {
            0.0
        } else {
            self.columns_within_2sigma as f64 / self.columns_eligible as f64
        }
    }
}

/// Analytic flux averaged over the time cells of `grid`, from a grid
/// refined `refine` times in t. Also returns the refined joint.
fn cell_averaged_flux(
    st: &qarrival_core::TwoSlitState,
    screen: &ScreenGeometry,
    grid: &SpaceTimeGrid,
    refine: usize,
) -> CliResult<(JointDistribution, JointDistribution)> {
    let nt = grid.n_times();
    let (t0, t1) = (grid.times[0], grid.times[nt - 1]);
    let fine_grid = SpaceTimeGrid::new(grid.screen_coords.clone(), linspace(t0, t1, (nt - 1) * refine + 1))?;
    let fine = flux_joint(st, screen, &fine_grid)?;
    let nf = fine_grid.n_times();
    let half = refine / 2;
    let h = fine_grid.times[1] - fine_grid.times[0];
    let mut density = Vec::with_capacity(grid.n_coords() * nt);
    for i in 0..grid.n_coords() {
        let row = fine.row(i);
        for j in 0..nt {
            let lo = (j * refine).saturating_sub(half);
            let hi = (j * refine + half).min(nf - 1);
            let s: f64 = (lo..hi).map(|k| 0.5 * (row[k] + row[k + 1])).sum::<f64>() * h;
            density.push(s / ((hi - lo) as f64 * h));
        }
    }
    let coarse = JointDistribution::from_unnormalized(grid.clone(), density, ProposalTag::Qf, Source::Analytic)?;
    let coarse = match &fine.capture {
        Some(c) => coarse.with_capture(c.fraction, &c.method),
        None => coarse,
    };
    Ok((coarse, fine))
}

fn tv_counts(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let na: f64 = a.iter().zip(w).map(|(x, w)| x * w).sum();
    let nb: f64 = b.iter().zip(w).map(|(x, w)| x * w).sum();
    0.5 * a.iter().zip(b).zip(w).map(|((x, y), w)| (x / na - y / nb).abs() * w).sum::<f64>()
}

/// Poisson bootstrap of a histogram: TV of each resample against the parent.
fn bootstrap_tv(counts: &[u64], grid: &SpaceTimeGrid, replicates: usize, seed: u64) -> (f64, f64) {
    let ws = trapezoid_weights(&grid.screen_coords);
    let wt = trapezoid_weights(&grid.times);
    let nt = grid.n_times();
    let w: Vec<f64> = (0..counts.len()).map(|k| ws[k / nt] * wt[k % nt]).collect();
    let parent: Vec<f64> = counts.iter().zip(&w).map(|(&c, w)| c as f64 / w).collect();
    let tvs: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = counter_rng(seed ^ 0xB0_07_57_AB, b);
            let resampled: Vec<f64> = counts
                .iter()
                .zip(&w)
                .map(|(&c, w)| {
                    if c == 0 {
                        0.0
                    } else {
                        Poisson::new(c as f64).expect("positive rate").sample(&mut rng) / w
                    }
                })
                .collect();
            tv_counts(&resampled, &parent, &w)
        })
        .collect();
    let n = tvs.len().max(1) as f64;
    let mean = tvs.iter().sum::<f64>() / n;
    let var = tvs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn nearest(axis: &[f64], v: f64) -> Option<usize> {
    let n = axis.len();
    if v < axis[0] || v > axis[n - 1] {
        return None;
    }
    let j = axis.partition_point(|&a| a < v);
    if j == 0 {
        return Some(0);
    }
    Some(if v - axis[j - 1] <= axis[j] - v { j - 1 } else { j })
}

pub(crate) struct ColumnCheck {
    pub x: Vec<f64>,
    pub n: Vec<f64>,
    pub mc_mean: Vec<f64>,
    pub mc_se: Vec<f64>,
    pub flux_mean: Vec<f64>,
    pub z: Vec<f64>,
}

/// MC local mean per column from raw event times against the analytic one.
fn column_check(events: &[ArrivalEvent], fine: &JointDistribution) -> ColumnCheck {
    let xs = &fine.grid.screen_coords;
    let nc = xs.len();
    let (mut n, mut s1, mut s2) = (vec![0.0; nc], vec![0.0; nc], vec![0.0; nc]);
    for e in events {
        if let Some(i) = nearest(xs, e.x_screen) {
            n[i] += 1.0;
            s1[i] += e.t;
            s2[i] += e.t * e.t;
        }
    }
    let wt = trapezoid_weights(&fine.grid.times);
    let flux_mean: Vec<f64> = (0..nc)
        .map(|i| {
            let row = fine.row(i);
            let m0: f64 = row.iter().zip(&wt).map(|(p, w)| p * w).sum();
            let m1: f64 = row.iter().zip(&wt).zip(&fine.grid.times).map(|((p, w), t)| p * w * t).sum();
            if m0 > 0.0 {
                m1 / m0
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut out = ColumnCheck {
        x: xs.clone(),
        n: n.clone(),
        mc_mean: vec![f64::NAN; nc],
        mc_se: vec![f64::NAN; nc],
        flux_mean,
        z: vec![f64::NAN; nc],
    };
    for i in 0..nc {
        if n[i] >= 2.0 {
            let m = s1[i] / n[i];
            let var = ((s2[i] - n[i] * m * m) / (n[i] - 1.0)).max(0.0);
            let se = (var / n[i]).sqrt();
            out.mc_mean[i] = m;
            out.mc_se[i] = se;
            if se > 0.0 {
                out.z[i] = (m - out.flux_mean[i]) / se;
            }
        }
    }
    out
}

/// Runs of bins with no first arrival whose all-arrival events are too
/// many to be missing first arrivals by chance. With `p` the probe's overall
/// first/all ratio, a run holding `n` events has no first arrival with
/// probability (1 − p)ⁿ; runs below `alpha` are gaps. Empty bins at either
/// end of a run are trimmed.
pub fn find_gaps(first: &[u64], all: &[u64], edges: &[f64], alpha: f64) -> Vec<Gap> {
    let (nf, na): (u64, u64) = (first.iter().sum(), all.iter().sum());
    if na == 0 {
        return Vec::new();
    }
    let p = nf as f64 / na as f64;
    let mut gaps = Vec::new();
    let mut k = 0;
    while k < first.len() {
        if first[k] > 0 {
            k += 1;
            continue;
        }
        let mut end = k;
        while end < first.len() && first[end] == 0 {
            end += 1;
        }
        let occupied: Vec<usize> = (k..end).filter(|&j| all[j] > 0).collect();
        if let (Some(&lo), Some(&hi)) = (occupied.first(), occupied.last()) {
            let n: u64 = all[lo..=hi].iter().sum();
            let p_value = (1.0 - p).powf(n as f64);
            if p_value < alpha {
                gaps.push(Gap {
                    t_start_ms: edges[lo],
                    t_end_ms: edges[hi + 1],
                    bins: hi + 1 - lo,
                    all_count: n,
                    p_value,
                });
            }
        }
        k = end;
    }
    gaps
}

pub(crate) fn run(ctx: &mut Ctx) -> CliResult<TrajectoryReport> {
    let cfg = ctx.cfg;
    let tc = &cfg.trajectories;
    let st = cfg.build_state()?;
    let screen = ScreenGeometry::horizontal(tc.l_y, tc.span)?;
    let label = mm_label("ly", tc.l_y);
    let mut ecfg = EnsembleConfig::new(tc.n, cfg.seed, &screen);
    ecfg.tol = tc.tol;
    ecfg.t_max = tc.t_max;
    let res = ctx.timer.stage("ensemble", || run_ensemble(&st, &screen, &ecfg))?;
    let (bin, json) = write_event_dump(&ctx.products.path(&format!("{label}_events")), &res)?;
    ctx.products.adopt(&bin)?;
    ctx.products.adopt(&json)?;

    let grid = SpaceTimeGrid::uniform(tc.span, tc.n_coords, [0.0, tc.t_max], tc.n_times)?;
    let (mc_all, counts_all) = histogram_joint(&res.events, &grid, EventFilter::All, 1.0)?;
    let (mc_first, counts_first) = histogram_joint(&res.events, &grid, EventFilter::First, 1.0)?;
    let (flux, fine) = ctx.timer.stage("flux reference", || cell_averaged_flux(&st, &screen, &grid, tc.refine))?;

    let max_nodes = cfg.output.max_joint_nodes;
    ctx.timer.stage("write", || -> CliResult<()> {
        let p = &mut ctx.products;
        p.joint(&format!("{label}_QF_mc"), &mc_all, Some(&screen), max_nodes)?;
        p.joint(&format!("{label}_BTC_mc"), &mc_first, Some(&screen), max_nodes)?;
        p.joint(&format!("{label}_QF_cells"), &flux, Some(&screen), max_nodes)?;
        Ok(())
    })?;

    let force = CompareOptions {
        force: true,
        coord_range: None,
    };
    let tv_mc = compare(&mc_all, &flux, &force)?.tv_joint;
    let (boot_mean, boot_std) = ctx.timer.stage("bootstrap", || bootstrap_tv(&counts_all, &grid, tc.bootstrap, cfg.seed));

    let cc = column_check(&res.events, &fine);
    let eligible: Vec<usize> = (0..cc.x.len()).filter(|&i| cc.n[i] >= tc.min_column_events as f64 && cc.z[i].is_finite()).collect();
    let within = eligible.iter().filter(|&&i| cc.z[i].abs() <= 2.0).count();
    let beyond = eligible.iter().filter(|&&i| cc.z[i].abs() > 4.0).count();
    let max_z = eligible.iter().map(|&i| cc.z[i].abs()).fold(0.0, f64::max);
    ctx.products.columns(
        &format!("{label}_local_means_mc.csv"),
        &[
            ("x_um".into(), &cc.x),
            ("events".into(), &cc.n),
            ("mc_mean_ms".into(), &cc.mc_mean),
            ("mc_se_ms".into(), &cc.mc_se),
            ("QF_mean_ms".into(), &cc.flux_mean),
            ("z".into(), &cc.z),
        ],
    )?;

    // first against all arrivals in the probe strips
    let nb = (tc.t_max / tc.gap_bin_ms).round().max(1.0) as usize;
    let edges = linspace(0.0, tc.t_max, nb + 1);
    let hw = cfg.horizontal.probe_half_width;
    let mut probe_x: Vec<f64> = cfg.horizontal.probes_mm.iter().map(|x| x * 1000.0).collect();
    if !probe_x.contains(&GAP_PROBE.0) {
        probe_x.push(GAP_PROBE.0);
    }
    let mut strips = Vec::new();
    for &xc in &probe_x {
        let half = if xc == GAP_PROBE.0 { GAP_PROBE.1 } else { hw };
        let (mut first, mut all) = (vec![0u64; nb], vec![0u64; nb]);
        for e in res.events.iter().filter(|e| (e.x_screen - xc).abs() <= half) {
            let k = ((e.t / tc.t_max * nb as f64) as usize).min(nb - 1);
            all[k] += 1;
            if e.order == 1 {
                first[k] += 1;
            }
        }
        strips.push((xc, first, all));
    }
    let lo: Vec<f64> = edges[..nb].to_vec();
    let hi: Vec<f64> = edges[1..].to_vec();
    let counts: Vec<(String, Vec<f64>)> = strips
        .iter()
        .flat_map(|(xc, first, all)| {
            let f = |v: &[u64]| v.iter().map(|&c| c as f64).collect::<Vec<f64>>();
            [
                (format!("first@{}mm", xc / 1000.0), f(first)),
                (format!("all@{}mm", xc / 1000.0), f(all)),
            ]
        })
        .collect();
    let mut cols: Vec<(String, &[f64])> = vec![("t_lo_ms".into(), &lo), ("t_hi_ms".into(), &hi)];
    cols.extend(counts.iter().map(|(n, d)| (n.clone(), d.as_slice())));
    ctx.products.columns(&format!("{label}_probe_counts.csv"), &cols)?;
    let (_, first, all) = strips.iter().find(|s| s.0 == GAP_PROBE.0).expect("gap probe is always present");
    let gaps = find_gaps(first, all, &edges, GAP_ALPHA);
    let (xc, hw) = GAP_PROBE;
    let cells_first = bin_events(&res.events, &grid, EventFilter::First);
    let exceed = cells_first.iter().zip(&counts_all).filter(|(f, a)| f > a).count()
        + strips
            .iter()
            .map(|(_, f, a)| f.iter().zip(a).filter(|(f, a)| f > a).count())
            .sum::<usize>();
    debug_assert_eq!(cells_first, counts_first);

    Ok(TrajectoryReport {
        n_trajectories: res.n_trajectories,
        l_y_um: tc.l_y,
        events_all: res.events.len() as u64,
        events_first: res.events.iter().filter(|e| e.order == 1).count() as u64,
        stats: res.stats,
        tv_mc_vs_flux: tv_mc,
        bootstrap_tv_mean: boot_mean,
        bootstrap_tv_std: boot_std,
        bootstrap_replicates: tc.bootstrap,
        columns_eligible: eligible.len(),
        columns_within_2sigma: within,
        columns_beyond_4sigma: beyond,
        max_abs_z: max_z,
        gap_probe_mm: [(xc - hw) / 1000.0, (xc + hw) / 1000.0],
        gap_bin_ms: tc.t_max / nb as f64,
        gaps,
        first_exceeds_all: exceed,
    })
}
