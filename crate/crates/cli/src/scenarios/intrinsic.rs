//! Vertical and horizontal screens with the intrinsic proposals.

use std::time::Instant;

use qarrival_core::bohm::counter_rng;
use qarrival_core::intrinsic::{flux_joint, semiclassical_joint, standard_joint};
use qarrival_core::observables::{
    compare, cumulative_position, local_mean_arrival_time, local_time_distribution, mean_arrival_time, CompareOptions, Histogram,
};
use qarrival_core::{JointDistribution, ProposalTag, ScreenGeometry, SpaceTimeGrid, TimeDistribution, TwoSlitState};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mm_label, summarize, sup_relative_difference, Ctx, PairSummary, ProposalSummary};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalScreenReport {
    pub l_x_um: f64,
    pub window_ms: [f64; 2],
    /// L/u_x.
    pub classical_time_ms: f64,
    pub proposals: Vec<ProposalSummary>,
    /// sup-norm difference of the time marginals relative to their peak.
    pub pairwise_sup_rel: Vec<(String, String, f64)>,
    pub max_pairwise_sup_rel: f64,
    /// Largest |mean − L/u_x| / (L/u_x).
    pub max_mean_rel_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalReport {
    pub screens: Vec<VerticalScreenReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraySummary {
    pub range_mm: [f64; 2],
    pub sup_gap_ms: f64,
    pub sup_gap_coord_mm: Option<f64>,
    pub local_std_ms: Option<f64>,
    pub events_for_5sigma: Option<u64>,
    pub standard_error_at_1e4_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub x_mm: f64,
    pub tag: ProposalTag,
    pub mean_ms: f64,
    pub n_samples: usize,
    pub sample_mean_ms: Option<f64>,
    pub sample_se_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizontalScreenReport {
    pub l_y_um: f64,
    pub proposals: Vec<ProposalSummary>,
    pub pairs: Vec<PairSummary>,
    pub tv_time_std_qf: Option<f64>,
    pub gray: Option<GraySummary>,
    pub probes: Vec<ProbeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizontalReport {
    pub screens: Vec<HorizontalScreenReport>,
}

impl HorizontalReport {
    pub fn screen(&self, l_y: f64) -> Option<&HorizontalScreenReport> {
        self.screens.iter().find(|s| s.l_y_um == l_y)
    }
}

pub(crate) fn intrinsic_joint(st: &TwoSlitState, screen: &ScreenGeometry, grid: &SpaceTimeGrid, tag: ProposalTag) -> CliResult<JointDistribution> {
    Ok(match tag {
        ProposalTag::Sc => semiclassical_joint(st, screen, grid)?,
        ProposalTag::Std => standard_joint(st, screen, grid)?,
        ProposalTag::Qf => flux_joint(st, screen, grid)?,
        other => return Err(CliError::Config(format!("{other} is not an intrinsic proposal"))),
    })
}

fn compute_joints(ctx: &mut Ctx, label: &str, screen: &ScreenGeometry, grid: &SpaceTimeGrid, tags: &[ProposalTag]) -> CliResult<Vec<JointDistribution>> {
    let st = ctx.cfg.build_state()?;
    tags.iter()
        .map(|&t| ctx.timer.stage(format!("{label}/{t}"), || intrinsic_joint(&st, screen, grid, t)))
        .collect()
}

/// Joints, marginals and local-mean curves of joints sharing one grid.
pub(crate) fn write_family(ctx: &mut Ctx, label: &str, screen: &ScreenGeometry, joints: &[JointDistribution]) -> CliResult<()> {
    let grid = &joints[0].grid;
    let coord = format!("{}_um", screen.label());
    let p = &mut ctx.products;
    if ctx.cfg.output.write_joints {
        for jd in joints {
            p.joint(&format!("{label}_{}", jd.tag), jd, Some(screen), ctx.cfg.output.max_joint_nodes)?;
        }
    }
    let tms: Vec<Vec<f64>> = joints.iter().map(|j| j.time_marginal().density).collect();
    let mut cols: Vec<(String, &[f64])> = vec![("t_ms".into(), &grid.times)];
    cols.extend(joints.iter().zip(&tms).map(|(j, d)| (format!("{}_per_ms", j.tag), d.as_slice())));
    p.columns(&format!("{label}_time_marginals.csv"), &cols)?;

    let pms: Vec<Vec<f64>> = joints.iter().map(cumulative_position).collect();
    let mut cols: Vec<(String, &[f64])> = vec![(coord.clone(), &grid.screen_coords)];
    cols.extend(joints.iter().zip(&pms).map(|(j, d)| (format!("{}_per_um", j.tag), d.as_slice())));
    p.columns(&format!("{label}_position_marginals.csv"), &cols)?;

    let curves: Vec<_> = joints.iter().map(local_mean_arrival_time).collect();
    let opt = |v: &[Option<f64>]| -> Vec<f64> { v.iter().map(|x| x.unwrap_or(f64::NAN)).collect() };
    let data: Vec<(String, Vec<f64>)> = joints
        .iter()
        .zip(&curves)
        .flat_map(|(j, c)| {
            [
                (format!("{}_mean_ms", j.tag), opt(&c.mean_time)),
                (format!("{}_std_ms", j.tag), opt(&c.std_time)),
                (format!("{}_cell_mass", j.tag), c.mass.clone()),
            ]
        })
        .collect();
    let mut cols: Vec<(String, &[f64])> = vec![(coord, &grid.screen_coords)];
    cols.extend(data.iter().map(|(n, d)| (n.clone(), d.as_slice())));
    p.columns(&format!("{label}_local_means.csv"), &cols)?;
    Ok(())
}

pub(crate) fn vertical(ctx: &mut Ctx) -> CliResult<VerticalReport> {
    let cfg = ctx.cfg;
    let v = &cfg.vertical;
    let mut screens = Vec::new();
    for &l in &v.l_x {
        let screen = ScreenGeometry::vertical(l, v.span)?;
        let t_cl = (l - cfg.state.x0) / cfg.state.u_x;
        let window = match v.window {
            Some(w) => w,
            None if t_cl > 0.0 && t_cl.is_finite() => [0.7 * t_cl, 1.4 * t_cl],
            None => return Err(CliError::Config("vertical.window: needed when the packet does not move toward the screen".into())),
        };
        let grid = SpaceTimeGrid::uniform(v.span, v.n_coords, window, v.n_times)?;
        let label = mm_label("lx", l);
        let joints = compute_joints(ctx, &label, &screen, &grid, &v.proposals)?;
        let t0 = Instant::now();
        write_family(ctx, &label, &screen, &joints)?;
        ctx.timer.record(format!("{label}/write"), t0);

        let proposals = joints.iter().map(summarize).collect::<CliResult<Vec<_>>>()?;
        let tms: Vec<Vec<f64>> = joints.iter().map(|j| j.time_marginal().density).collect();
        let mut pairwise = Vec::new();
        for i in 0..joints.len() {
            for k in i + 1..joints.len() {
                pairwise.push((joints[i].tag.to_string(), joints[k].tag.to_string(), sup_relative_difference(&tms[i], &tms[k])));
            }
        }
        screens.push(VerticalScreenReport {
            l_x_um: l,
            window_ms: window,
            classical_time_ms: t_cl,
            max_pairwise_sup_rel: pairwise.iter().map(|p| p.2).fold(0.0, f64::max),
            max_mean_rel_dev: proposals.iter().map(|p| ((p.mean_ms - t_cl) / t_cl).abs()).fold(0.0, f64::max),
            pairwise_sup_rel: pairwise,
            proposals,
        });
    }
    Ok(VerticalReport { screens })
}

/// Inverse-CDF draws from a piecewise-linear density, uniform within cells.
pub(crate) fn sample_times(td: &TimeDistribution, n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let t = &td.times;
    let mut cdf = Vec::with_capacity(t.len() - 1);
    let mut acc = 0.0;
    for j in 0..t.len() - 1 {
        acc += 0.5 * (td.density[j] + td.density[j + 1]) * (t[j + 1] - t[j]);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Vec::new();
    }
    let mut rng = counter_rng(seed, stream);
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let j = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            t[j] + rng.random::<f64>() * (t[j + 1] - t[j])
        })
        .collect()
}

fn mean_and_se(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.len() < 2 {
        return (v.first().copied(), None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some((var / n).sqrt()))
}

pub(crate) fn horizontal(ctx: &mut Ctx) -> CliResult<HorizontalReport> {
    let cfg = ctx.cfg;
    let h = &cfg.horizontal;
    let mut screens = Vec::new();
    for &l in &h.l_y {
        let screen = ScreenGeometry::horizontal(l, h.span)?;
        let grid = SpaceTimeGrid::uniform(h.span, h.n_coords, h.window, h.n_times)?;
        let label = mm_label("ly", l);
        let joints = compute_joints(ctx, &label, &screen, &grid, &h.proposals)?;
        let t0 = Instant::now();
        write_family(ctx, &label, &screen, &joints)?;
        ctx.timer.record(format!("{label}/write"), t0);
        let proposals = joints.iter().map(summarize).collect::<CliResult<Vec<_>>>()?;

        // intrinsic windows on this screen truncate the late tail, so the
        // comparisons are forced and flagged
        let short = |j: &JointDistribution| j.capture.as_ref().is_some_and(|c| c.fraction < 0.999);
        let force = CompareOptions {
            force: true,
            coord_range: None,
        };
        let mut pairs = Vec::new();
        for i in 0..joints.len() {
            for k in i + 1..joints.len() {
                let m = ctx.timer.stage(format!("{label}/compare"), || compare(&joints[i], &joints[k], &force))?;
                pairs.push(PairSummary::new(&m, short(&joints[i]) || short(&joints[k])));
            }
        }
        let by_tag = |t: ProposalTag| joints.iter().find(|j| j.tag == t);
        let mut tv_time_std_qf = None;
        let mut gray = None;
        if let (Some(std), Some(qf)) = (by_tag(ProposalTag::Std), by_tag(ProposalTag::Qf)) {
            let m = compare(std, qf, &force)?;
            tv_time_std_qf = Some(m.tv_time);
            let gap: Vec<f64> = m.column_shifts_ms.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            ctx.products.columns(
                &format!("{label}_local_mean_gap.csv"),
                &[("x_um".into(), &grid.screen_coords), ("QF_minus_STD_ms".into(), &gap)],
            )?;
            let range = [h.gray_region_mm[0] * 1000.0, h.gray_region_mm[1] * 1000.0];
            let g = compare(
                std,
                qf,
                &CompareOptions {
                    force: true,
                    coord_range: Some(range),
                },
            )?;
            gray = Some(GraySummary {
                range_mm: h.gray_region_mm,
                sup_gap_ms: g.sup_local_mean_gap_ms,
                sup_gap_coord_mm: g.sup_gap_coord.map(|x| x / 1000.0),
                local_std_ms: g.local_std_ms,
                events_for_5sigma: g.events_for_5sigma,
                standard_error_at_1e4_ms: g.standard_error_at_1e4_ms,
            });
        }
        let t0 = Instant::now();
        let probes = probe_products(ctx, &label, &joints, h.window)?;
        ctx.timer.record(format!("{label}/probes"), t0);
        screens.push(HorizontalScreenReport {
            l_y_um: l,
            proposals,
            pairs,
            tv_time_std_qf,
            gray,
            probes,
        });
    }
    Ok(HorizontalReport { screens })
}

/// Local time distributions at the probe points and sampled histograms.
pub(crate) fn probe_products(ctx: &mut Ctx, label: &str, joints: &[JointDistribution], window: [f64; 2]) -> CliResult<Vec<ProbeSummary>> {
    let h = &ctx.cfg.horizontal;
    let times = &joints[0].grid.times;
    let n_bins = (((window[1] - window[0]) / 0.05).round() as usize).max(1);
    let edges = qarrival_core::grid::linspace(window[0], window[1], n_bins + 1);
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    let mut hists: Vec<(String, Vec<f64>)> = Vec::new();
    let mut out = Vec::new();
    for (pi, &x_mm) in h.probes_mm.iter().enumerate() {
        for (ti, jd) in joints.iter().enumerate() {
            let name = format!("{}@{x_mm}mm", jd.tag);
            let td = match local_time_distribution(jd, x_mm * 1000.0, h.probe_half_width) {
                Ok(td) => td,
                // a probe outside the joint's support has nothing to report
                Err(qarrival_core::Error::ZeroMass { .. }) | Err(qarrival_core::Error::EmptySupport) => continue,
                Err(e) => return Err(e.into()),
            };
            let mean = mean_arrival_time(&td)?;
            let draws = sample_times(&td, h.samples, ctx.cfg.seed, (pi * 16 + ti) as u64);
            let (sample_mean, se) = mean_and_se(&draws);
            if !draws.is_empty() {
                let hist = Histogram::from_values(&draws, edges.clone(), ctx.cfg.seed)?;
                hists.push((format!("{name}_per_ms"), hist.density()));
            }
            curves.push((format!("{name}_per_ms"), td.density));
            out.push(ProbeSummary {
                x_mm,
                tag: jd.tag,
                mean_ms: mean,
                n_samples: draws.len(),
                sample_mean_ms: sample_mean,
                sample_se_ms: se,
            });
        }
    }
    let mut cols: Vec<(String, &[f64])> = vec![("t_ms".into(), times)];
    cols.extend(curves.iter().map(|(n, d)| (n.clone(), d.as_slice())));
    ctx.products.columns(&format!("{label}_probes.csv"), &cols)?;
    if !hists.is_empty() {
        let lo: Vec<f64> = edges[..n_bins].to_vec();
        let hi: Vec<f64> = edges[1..].to_vec();
        let mut cols: Vec<(String, &[f64])> = vec![("t_lo_ms".into(), &lo), ("t_hi_ms".into(), &hi)];
        cols.extend(hists.iter().map(|(n, d)| (n.clone(), d.as_slice())));
        ctx.products.columns(&format!("{label}_probe_histograms.csv"), &cols)?;
    }
    Ok(out)
}
