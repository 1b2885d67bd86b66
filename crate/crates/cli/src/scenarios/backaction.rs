//! Detector back-action: ABR solve, PAB survival, first-arrival ensemble
//! and parameter sweeps.

use std::time::Instant;

use qarrival_core::backaction::{abr_joint, pab_joint, solve_abr_transverse, AbrConfig, AbrSolution, PabConfig, PabWavefunction};
use qarrival_core::bohm::{histogram_joint, run_ensemble, EnsembleConfig, EventFilter};
use qarrival_core::grid::interpolate;
use qarrival_core::observables::{compare, cumulative_position, CompareOptions};
use qarrival_core::{ScreenGeometry, SpaceTimeGrid, TwoSlitState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::intrinsic::{probe_products, write_family};
use super::{mm_label, summarize, Ctx, PairSummary, ProbeSummary, ProposalSummary};
use crate::config::BackactionConfig;
use crate::error::CliResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BtcSummary {
    pub n_trajectories: u64,
    pub events_first: u64,
    pub pairs: Vec<PairSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackactionReport {
    pub l_y_um: f64,
    pub kappa_per_um: f64,
    pub lambda_um: f64,
    pub pab_wavefunction: PabWavefunction,
    pub abr_config: AbrConfig,
    pub abr_max_wall_mass: f64,
    pub abr_absorbed: f64,
    pub pab_absorbed: f64,
    pub absorbed_abs_diff: f64,
    pub proposals: Vec<ProposalSummary>,
    pub abr_vs_pab: PairSummary,
    pub compare_at_mm: f64,
    /// |P_PAB − P_ABR| / P_ABR of the normalized x-marginals there.
    pub marginal_rel_diff_at: f64,
    pub probes: Vec<ProbeSummary>,
    pub btc: Option<BtcSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub absorbed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub l_y_um: f64,
    pub t_max_ms: f64,
    pub kappa: Vec<SweepPoint>,
    pub kappa_argmax: Option<f64>,
    /// The largest absorption is at neither end of the κ list.
    pub kappa_interior_max: bool,
    pub lambda: Vec<SweepPoint>,
    pub pab_wavefunction: PabWavefunction,
}

fn abr_config(st: &TwoSlitState, b: &BackactionConfig, kappa: f64) -> AbrConfig {
    let mut c = AbrConfig::for_state(st, b.l_y, kappa, b.t_max);
    if let Some(dt) = b.dt {
        c.dt = dt;
    }
    if let Some(dy) = b.dy {
        c.ny = ((b.l_y - c.y_min) / dy).ceil() as usize + 1;
    }
    c
}

fn solve(st: &TwoSlitState, b: &BackactionConfig, kappa: f64) -> CliResult<AbrSolution> {
    Ok(solve_abr_transverse(st, b.l_y, &abr_config(st, b, kappa))?)
}

fn pab_config(b: &BackactionConfig, lambda: f64) -> PabConfig {
    let mut c = PabConfig::new(lambda);
    c.wavefunction = b.pab_wavefunction;
    if let Some(dt) = b.dt {
        c.dt = dt;
    }
    c
}

pub(crate) fn run(ctx: &mut Ctx) -> CliResult<BackactionReport> {
    let cfg = ctx.cfg;
    let b = &cfg.backaction;
    let st = cfg.build_state()?;
    let label = mm_label("ly", b.l_y);
    let screen = ScreenGeometry::horizontal(b.l_y, b.span)?;
    let grid = SpaceTimeGrid::uniform(b.span, b.n_coords, [0.0, b.t_max], b.n_times)?;

    let sol = ctx.timer.stage("abr solve", || solve(&st, b, b.kappa))?;
    let trace = ctx.products.path(&format!("{label}_abr_boundary_trace.csv"));
    sol.write_trace_csv(&trace)?;
    ctx.products.adopt(&trace)?;
    let abr = ctx.timer.stage("abr joint", || abr_joint(&st, &screen, &sol, &grid))?;
    let pab = ctx.timer.stage("pab", || pab_joint(&st, &screen, &pab_config(b, b.lambda), &grid, Some(&sol)))?;

    let t0 = Instant::now();
    let joints = [abr, pab.joint.clone()];
    write_family(ctx, &label, &screen, &joints)?;
    let probes = probe_products(ctx, &label, &joints, [0.0, b.t_max])?;
    ctx.timer.record("write", t0);
    let [abr, _] = joints;
    let pm_abr = cumulative_position(&abr);
    let pm_pab = cumulative_position(&pab.joint);
    let rel: Vec<f64> = pm_abr
        .iter()
        .zip(&pm_pab)
        .map(|(a, p)| if *a > 0.0 { (p - a).abs() / a } else { f64::NAN })
        .collect();
    ctx.products.columns(
        &format!("{label}_x_marginal_rel_diff.csv"),
        &[("x_um".into(), &grid.screen_coords), ("PAB_vs_ABR_rel_diff".into(), &rel)],
    )?;
    let surv_abr: Vec<f64> = grid.times.iter().map(|&t| interpolate(&sol.times, &sol.interior_norm, t)).collect();
    let surv_pab: Vec<f64> = grid.times.iter().map(|&t| interpolate(&pab.times, &pab.survival, t)).collect();
    ctx.products.columns(
        &format!("{label}_survival.csv"),
        &[
            ("t_ms".into(), &grid.times),
            ("ABR_survival".into(), &surv_abr),
            ("PAB_survival".into(), &surv_pab),
        ],
    )?;

    let x_cmp = b.compare_at_mm * 1000.0;
    let a = interpolate(&grid.screen_coords, &pm_abr, x_cmp);
    let p = interpolate(&grid.screen_coords, &pm_pab, x_cmp);
    let force = CompareOptions {
        force: true,
        coord_range: None,
    };
    let short = |c: &Option<qarrival_core::grid::Capture>| c.as_ref().is_some_and(|c| c.fraction < 0.999);
    let m = compare(&abr, &pab.joint, &force)?;
    let abr_vs_pab = PairSummary::new(&m, short(&abr.capture) || short(&pab.joint.capture));

    let btc = if b.btc {
        let t0 = Instant::now();
        let s = btc(ctx, &st, &sol)?;
        ctx.timer.record("btc", t0);
        Some(s)
    } else {
        None
    };
    Ok(BackactionReport {
        l_y_um: b.l_y,
        kappa_per_um: b.kappa,
        lambda_um: b.lambda,
        pab_wavefunction: b.pab_wavefunction,
        abr_config: sol.config,
        abr_max_wall_mass: sol.max_wall_mass,
        abr_absorbed: sol.absorbed(),
        pab_absorbed: pab.absorbed,
        absorbed_abs_diff: (sol.absorbed() - pab.absorbed).abs(),
        proposals: vec![summarize(&abr)?, summarize(&pab.joint)?],
        abr_vs_pab,
        compare_at_mm: b.compare_at_mm,
        marginal_rel_diff_at: (p - a).abs() / a,
        probes,
        btc,
    })
}

/// First arrivals of the trajectory ensemble, compared with ABR and PAB on
/// the histogram grid.
fn btc(ctx: &mut Ctx, st: &TwoSlitState, sol: &AbrSolution) -> CliResult<BtcSummary> {
    let cfg = ctx.cfg;
    let b = &cfg.backaction;
    let tc = &cfg.trajectories;
    let screen = ScreenGeometry::horizontal(b.l_y, tc.span)?;
    let grid = SpaceTimeGrid::uniform(tc.span, tc.n_coords, [0.0, b.t_max], tc.n_times)?;
    let mut ecfg = EnsembleConfig::new(tc.n, cfg.seed, &screen);
    ecfg.tol = tc.tol;
    ecfg.t_max = b.t_max;
    ecfg.first_exit_only = true;
    let res = run_ensemble(st, &screen, &ecfg)?;
    let (btc, _) = histogram_joint(&res.events, &grid, EventFilter::First, 1.0)?;
    let abr = abr_joint(st, &screen, sol, &grid)?;
    let pab = pab_joint(st, &screen, &pab_config(b, b.lambda), &grid, Some(sol))?.joint;
    let label = mm_label("ly", b.l_y);
    ctx.products
        .joint(&format!("{label}_BTC_mc"), &btc, Some(&screen), cfg.output.max_joint_nodes)?;
    let force = CompareOptions {
        force: true,
        coord_range: None,
    };
    let pairs = [&abr, &pab]
        .iter()
        .map(|jd| Ok(PairSummary::new(&compare(&btc, jd, &force)?, true)))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(BtcSummary {
        n_trajectories: tc.n,
        events_first: res.events.len() as u64,
        pairs,
    })
}

pub(crate) fn sweep(ctx: &mut Ctx) -> CliResult<SweepReport> {
    let cfg = ctx.cfg;
    let b = &cfg.backaction;
    let st = cfg.build_state()?;
    let kappa: Vec<SweepPoint> = ctx.timer.stage("kappa", || {
        b.kappa_sweep
            .par_iter()
            .map(|&k| {
                Ok(SweepPoint {
                    value: k,
                    absorbed: solve(&st, b, k)?.absorbed(),
                })
            })
            .collect::<CliResult<_>>()
    })?;
    // absorption only depends on the window end, so a coarse grid will do
    let screen = ScreenGeometry::horizontal(b.l_y, b.span)?;
    let grid = SpaceTimeGrid::uniform(b.span, 301, [0.0, b.t_max], 1201)?;
    let lambda: Vec<SweepPoint> = ctx.timer.stage("lambda", || {
        b.lambda_sweep
            .iter()
            .map(|&l| {
                let cfg = pab_config(b, l);
                let sol = match b.pab_wavefunction {
                    PabWavefunction::Absorbing => Some(solve(&st, b, b.kappa)?),
                    _ => None,
                };
                Ok(SweepPoint {
                    value: l,
                    absorbed: pab_joint(&st, &screen, &cfg, &grid, sol.as_ref())?.absorbed,
                })
            })
            .collect::<CliResult<_>>()
    })?;
    let argmax = kappa.iter().enumerate().max_by(|a, b| a.1.absorbed.total_cmp(&b.1.absorbed));
    let interior = argmax.is_some_and(|(i, _)| i > 0 && i + 1 < kappa.len());
    if !kappa.is_empty() {
        let v: Vec<f64> = kappa.iter().map(|p| p.value).collect();
        let a: Vec<f64> = kappa.iter().map(|p| p.absorbed).collect();
        ctx.products
            .columns("kappa_sweep.csv", &[("kappa_per_um".into(), &v), ("absorbed".into(), &a)])?;
    }
    if !lambda.is_empty() {
        let v: Vec<f64> = lambda.iter().map(|p| p.value).collect();
        let a: Vec<f64> = lambda.iter().map(|p| p.absorbed).collect();
        ctx.products
            .columns("lambda_sweep.csv", &[("lambda_um".into(), &v), ("absorbed".into(), &a)])?;
    }
    Ok(SweepReport {
        l_y_um: b.l_y,
        t_max_ms: b.t_max,
        kappa_argmax: argmax.map(|(_, p)| p.value),
        kappa_interior_max: interior,
        kappa,
        lambda,
        pab_wavefunction: b.pab_wavefunction,
    })
}
