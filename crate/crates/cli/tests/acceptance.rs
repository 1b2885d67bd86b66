//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Criteria can be selected by number, e.g.
//! `cargo test --test acceptance -- 1 7`.

use std::path::Path;
use std::time::Instant;

use qarrival_cli::{run_scenario, ExperimentConfig, Report, Scenario};
use qarrival_core::backaction::{pab_joint, solve_abr_transverse, AbrConfig, Boundary, PabConfig};
use qarrival_core::bohm::{counter_rng, hermite, initial_position, integrate_trajectory, IntegratorConfig, Termination, Trajectory};
use qarrival_core::grid::linspace;
use qarrival_core::intrinsic::{flux_joint, normal_current, semiclassical_joint, standard_joint, standard_normal_density};
use qarrival_core::model::{GaussianPacket1D, SlitParameters};
use qarrival_core::observables::{cell_masses, sample_events};
use qarrival_core::quadrature::trapezoid;
use qarrival_core::{JointDistribution, Orientation, ProposalTag, ScreenGeometry, Source, SpaceTimeGrid, TwoSlitState, UnitSystem};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<(bool, String), String>;

fn run(scenario: Scenario, cfg: &ExperimentConfig, out: &Path) -> Result<(Report, f64), String> {
    let t0 = Instant::now();
    let (r, _) = run_scenario(scenario, cfg, out, "acceptance").map_err(|e| e.to_string())?;
    Ok((r, t0.elapsed().as_secs_f64()))
}

fn vertical(out: &Path) -> Outcome {
    let (r, wall) = run(Scenario::Vertical, &ExperimentConfig::default(), out)?;
    let Report::Vertical(r) = r else { unreachable!() };
    let s = &r.screens[0];
    let means: Vec<String> = s.proposals.iter().map(|p| format!("{} {:.3}", p.tag, p.mean_ms)).collect();
    let ok = s.l_x_um == 300_000.0 && s.max_pairwise_sup_rel < 0.05 && s.max_mean_rel_dev < 0.01 && wall < 60.0;
    Ok((
        ok,
        format!(
            "L_x 300 mm, max pairwise sup-rel {:.2e} (< 0.05), means [{}] ms, max deviation from 100 ms {:.3}% (< 1%), {wall:.0} s (< 60 s)",
            s.max_pairwise_sup_rel,
            means.join(", "),
            100.0 * s.max_mean_rel_dev
        ),
    ))
}

fn horizontal(out: &Path, gray: &mut Option<qarrival_cli::scenarios::GraySummary>) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.horizontal.l_y = vec![15.0, 30.0];
    let (r, wall) = run(Scenario::Horizontal, &cfg, out)?;
    let Report::Horizontal(r) = r else { unreachable!() };
    let tv = |l: f64| r.screen(l).and_then(|s| s.tv_time_std_qf).unwrap_or(f64::NAN);
    let (a, b) = (tv(15.0), tv(30.0));
    *gray = r.screen(15.0).and_then(|s| s.gray.clone());
    let ok = a > 0.02 && b < a && wall < 300.0;
    Ok((ok, format!("TV(STD, QF) {a:.4} at 15 um (> 0.02), {b:.4} at 30 um (smaller), {wall:.0} s (< 300 s)")))
}

fn gray_region(gray: &Option<qarrival_cli::scenarios::GraySummary>) -> Outcome {
    let g = gray.as_ref().ok_or("horizontal run produced no gray-region summary")?;
    let events = g.events_for_5sigma.ok_or("no events estimate")?;
    let se = g.standard_error_at_1e4_ms.ok_or("no standard error estimate")?;
    let ok = g.sup_gap_ms > 0.1 && events <= 10_000 && se <= 0.02;
    Ok((
        ok,
        format!(
            "sup local-mean gap {:.3} ms at {:.2} mm (> 0.1 ms), {events} events for a 5 sigma separation (<= 1e4), standard error at 1e4 events {se:.4} ms",
            g.sup_gap_ms,
            g.sup_gap_coord_mm.unwrap_or(f64::NAN)
        ),
    ))
}

fn trajectories(out: &Path) -> Result<(Outcome, Outcome), String> {
    let mut cfg = ExperimentConfig::default();
    cfg.trajectories.n = 1_000_000;
    let (r, wall) = run(Scenario::Trajectories, &cfg, out)?;
    let Report::Trajectories(r) = r else { unreachable!() };
    let frac = r.fraction_within_2sigma();
    let c3 = r.tv_mc_vs_flux < 3.0 * r.bootstrap_tv_mean && frac >= 0.9 && r.columns_beyond_4sigma == 0 && wall < 600.0;
    let d3 = format!(
        "1e6 trajectories, TV(MC, flux) {:.4} vs 3 x bootstrap {:.4}, {}/{} columns within 2 sigma (max |z| {:.2}), {wall:.0} s (< 600 s)",
        r.tv_mc_vs_flux,
        3.0 * r.bootstrap_tv_mean,
        r.columns_within_2sigma,
        r.columns_eligible,
        r.max_abs_z
    );
    let widest = r.gaps.iter().map(|g| g.t_end_ms - g.t_start_ms).fold(0.0, f64::max);
    let c4 = !r.gaps.is_empty() && r.first_exceeds_all == 0;
    let d4 = format!(
        "{} zero-count first-arrival gaps at 19.2 mm where all-arrivals have mass (widest {widest:.2} ms), {} bins with first > all",
        r.gaps.len(),
        r.first_exceeds_all
    );
    Ok((Ok((c3, d3)), Ok((c4, d4))))
}

fn kappa_sweep(out: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.backaction.lambda_sweep = vec![];
    let (r, wall) = run(Scenario::Sweep, &cfg, out)?;
    let Report::Sweep(r) = r else { unreachable!() };
    let at_one = r.kappa.iter().find(|p| p.value == 1.0).map(|p| p.absorbed).unwrap_or(f64::NAN);
    let argmax = r.kappa_argmax.unwrap_or(f64::NAN);
    let per_kappa = wall / r.kappa.len() as f64;
    let ok = (at_one - 0.40).abs() <= 0.05 && r.kappa_interior_max && [0.5, 1.0, 2.0].contains(&argmax) && per_kappa < 120.0;
    let pts: Vec<String> = r.kappa.iter().map(|p| format!("{}: {:.4}", p.value, p.absorbed)).collect();
    Ok((
        ok,
        format!("absorbed [{}], kappa 1 gives {at_one:.4} (0.40 +- 0.05), interior maximum at {argmax}, {per_kappa:.0} s per kappa (< 120 s)", pts.join(", ")),
    ))
}

fn pab(out: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.backaction.btc = false;
    let (r, _) = run(Scenario::Backaction, &cfg, out)?;
    let Report::Backaction(r) = r else { unreachable!() };
    let ok = r.absorbed_abs_diff < 0.02 && (0.4 / 1.5..=0.4 * 1.5).contains(&r.marginal_rel_diff_at);
    Ok((
        ok,
        format!(
            "absorbed ABR {:.4}, PAB {:.4}, |diff| {:.4} (< 0.02); x-marginal relative difference at {} mm {:.3} (0.4 within x1.5)",
            r.abr_absorbed, r.pab_absorbed, r.absorbed_abs_diff, r.compare_at_mm, r.marginal_rel_diff_at
        ),
    ))
}

// fourth-order centred difference
fn d4(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

fn state(s: f64, sx: f64, sy: f64, ux: f64, uy: f64) -> TwoSlitState {
    let p = SlitParameters {
        s,
        sigma_x: sx,
        sigma_y: sy,
        u_x: ux,
        u_y: uy,
        x0: 0.0,
    };
    TwoSlitState::from_parameters(&p, UnitSystem::helium()).unwrap()
}

fn check(ok: bool, what: &str, failures: &mut Vec<String>) {
    if !ok {
        failures.push(what.to_string());
    }
}

fn normalization(failures: &mut Vec<String>) {
    let a = UnitSystem::helium().alpha;
    let mut rng = counter_rng(8, 0);
    for _ in 0..50 {
        let p = GaussianPacket1D::new(rng.random_range(-5.0..5.0), rng.random_range(-50.0..50.0), rng.random_range(0.05..3.0)).unwrap();
        let t = rng.random_range(0.0..5.0);
        let (c, w) = (p.center(t), p.width(a, t));
        let xs = linspace(c - 12.0 * w, c + 12.0 * w, 4001);
        let d: Vec<f64> = xs.iter().map(|&x| p.density(a, x, t)).collect();
        check((trapezoid(&xs, &d) - 1.0).abs() < 1e-6, "packet normalization", failures);
    }
    let st = TwoSlitState::paper_default();
    let screen = ScreenGeometry::horizontal(15.0, [0.0, 30000.0]).unwrap();
    let grid = SpaceTimeGrid::uniform([0.0, 30000.0], 301, [0.0, 12.0], 601).unwrap();
    for jd in [
        semiclassical_joint(&st, &screen, &grid).unwrap(),
        standard_joint(&st, &screen, &grid).unwrap(),
        flux_joint(&st, &screen, &grid).unwrap(),
    ] {
        check((jd.total() - 1.0).abs() < 1e-6 && jd.density.iter().all(|v| *v >= 0.0), "joint normalization", failures);
    }
}

fn continuity_and_mirror(failures: &mut Vec<String>) {
    let mut rng = counter_rng(8, 1);
    for _ in 0..200 {
        let (s, sx, sy) = (rng.random_range(3.0..15.0), rng.random_range(0.2..2.0), rng.random_range(0.3..1.5));
        let (ux, uy) = (rng.random_range(0.0..100.0), rng.random_range(-5.0..5.0));
        let (t, rx, ry) = (rng.random_range(0.05..2.0), rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
        let st = state(s, sx, sy, ux, uy);
        let a = st.alpha();
        let x = st.longitudinal.center(t) + rx * st.longitudinal.width(a, t);
        let y = ry * (s + uy.abs() * t + 2.0 * st.transverse_up.width(a, t));
        let hx = 1e-3 * st.longitudinal.width(a, t).min(1.0 / (ux / a).max(1e-9));
        let hy = 1e-3 * st.transverse_up.width(a, t).min(1.0 / ((s + uy.abs() * t) / (a * t)).max(1e-9));
        let drho = d4(|t| st.density(x, y, t), t, 1e-5 * t);
        let djx = d4(|x| st.current_at(x, y, t).jx, x, hx);
        let djy = d4(|y| st.current_at(x, y, t).jy, y, hy);
        let scale = drho.abs().max(djx.abs()).max(djy.abs()).max(1e-300);
        check((drho + djx + djy).abs() <= 1e-5 * scale, "continuity residual", failures);

        let st = state(s, sx, sy, ux, 0.0);
        let y = y.abs();
        let (up, down) = (st.density(x, y, t), st.density(x, -y, t));
        check((up - down).abs() <= 1e-6 * up.max(down).max(1e-300), "mirror symmetry of the density", failures);
        let (ju, jd) = (st.current_at(x, y, t), st.current_at(x, -y, t));
        let floor = 1e-12 * up * st.alpha() / sy.min(sx);
        check(
            (ju.jy + jd.jy).abs() <= 1e-6 * ju.jy.abs() + floor && (ju.jx - jd.jx).abs() <= 1e-6 * ju.jx.abs() + floor,
            "mirror symmetry of the current",
            failures,
        );
    }
}

fn time_translation(failures: &mut Vec<String>) {
    let st = TwoSlitState::paper_default();
    let screen = ScreenGeometry::horizontal(15.0, [0.0, 40000.0]).unwrap();
    let tau = 0.3;
    let later = st.evolved(tau);
    let times = linspace(0.05, 6.0, 120);
    let shifted: Vec<f64> = times.iter().map(|t| t + tau).collect();
    let a = standard_normal_density(&later, &screen, &times).unwrap();
    let b = standard_normal_density(&st, &screen, &shifted).unwrap();
    let peak = b.iter().cloned().fold(0.0, f64::max);
    check(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-4 * peak), "time-translation covariance (STD)", failures);
    let flux_ok = times
        .iter()
        .zip(&shifted)
        .all(|(&t, &s)| (normal_current(&later, &screen, t) - normal_current(&st, &screen, s)).abs() < 1e-4 * normal_current(&st, &screen, s).abs().max(1e-12));
    check(flux_ok, "time-translation covariance (flux)", failures);
}

fn crank_nicolson(failures: &mut Vec<String>) {
    let p = GaussianPacket1D::new(10.0, 0.0, 0.5).unwrap();
    let st = TwoSlitState::new(GaussianPacket1D::new(0.0, 5.0, 1.0).unwrap(), p, p, UnitSystem::helium()).unwrap();
    let mut cfg = AbrConfig {
        kappa: 1.0,
        y_min: -60.0,
        ny: 2001,
        dt: 1e-4,
        t_max: 0.3,
        boundary: Boundary::Reflecting,
    };
    let sol = solve_abr_transverse(&st, 15.0, &cfg).unwrap();
    check(sol.interior_norm.iter().all(|n| (n - 1.0).abs() < 1e-10), "reflecting norm conservation", failures);
    cfg.boundary = Boundary::Robin;
    let sol = solve_abr_transverse(&st, 15.0, &cfg).unwrap();
    check(
        sol.interior_norm.windows(2).all(|w| w[1] <= w[0] + 1e-12) && sol.absorbed() > 0.01,
        "Robin norm decay",
        failures,
    );
    let st = TwoSlitState::paper_default();
    let screen = ScreenGeometry::horizontal(15.0, [0.0, 30000.0]).unwrap();
    let grid = SpaceTimeGrid::uniform([0.0, 30000.0], 101, [0.0, 12.0], 601).unwrap();
    let r = pab_joint(&st, &screen, &PabConfig::new(1.0), &grid, None).unwrap();
    check(r.survival.windows(2).all(|w| w[1] <= w[0]), "PAB survival decay", failures);
}

fn y_at(traj: &Trajectory, t: f64) -> f64 {
    let k = traj.samples.partition_point(|s| s.t < t).clamp(1, traj.samples.len() - 1);
    hermite(&traj.samples[k - 1], &traj.samples[k], t, Orientation::Horizontal).0
}

fn no_crossing(failures: &mut Vec<String>) {
    let st = TwoSlitState::paper_default();
    let cfg = IntegratorConfig::new(1e-8, 1.5);
    let checks = linspace(0.0, 1.5, 61);
    let (mut pairs, mut i) = (0, 0u64);
    while pairs < 1000 {
        let (xa, ya) = initial_position(&st, 11, 2 * i);
        let (xb, yb) = initial_position(&st, 11, 2 * i + 1);
        i += 1;
        let (Ok(a), Ok(b)) = (integrate_trajectory(&st, xa, ya, &cfg), integrate_trajectory(&st, xb, yb, &cfg)) else {
            continue;
        };
        if a.terminated != Termination::TimeLimit || b.terminated != Termination::TimeLimit {
            continue;
        }
        let sign = (ya - yb).signum();
        check(checks.iter().all(|&t| (y_at(&a, t) - y_at(&b, t)) * sign > 0.0), "Bohmian no-crossing", failures);
        pairs += 1;
    }
}

fn sampler(failures: &mut Vec<String>) {
    let grid = SpaceTimeGrid::uniform([-4.0, 4.0], 21, [0.0, 8.0], 41).unwrap();
    let d: Vec<f64> = grid
        .screen_coords
        .iter()
        .flat_map(|&x| grid.times.iter().map(move |&t| (1.0 + (2.0 * x).cos().powi(2)) * (-(x * x) / 4.0).exp() * t * t * (-t).exp()))
        .collect();
    let jd = JointDistribution::from_unnormalized(grid, d, ProposalTag::Qf, Source::Analytic).unwrap();
    let n = 100_000;
    let events = sample_events(&jd, n, 2024).unwrap();
    let (xs, ts) = (&jd.grid.screen_coords, &jd.grid.times);
    let ntc = ts.len() - 1;
    let mass = cell_masses(&jd);
    let total: f64 = mass.iter().sum();

    let mut counts = vec![0.0; mass.len()];
    for &(x, t) in &events {
        let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1) - 1;
        let j = ts.partition_point(|&v| v <= t).clamp(1, ts.len() - 1) - 1;
        counts[i * ntc + j] += 1.0;
    }
    let (mut chi2, mut bins, mut rest_obs, mut rest_exp) = (0.0, 0usize, 0.0, 0.0);
    for (m, c) in mass.iter().zip(&counts) {
        let e = n as f64 * m / total;
        if e >= 5.0 {
            chi2 += (c - e).powi(2) / e;
            bins += 1;
        } else {
            rest_obs += c;
            rest_exp += e;
        }
    }
    if rest_exp > 0.0 {
        chi2 += (rest_obs - rest_exp).powi(2) / rest_exp;
        bins += 1;
    }
    check(ChiSquared::new((bins - 1) as f64).unwrap().sf(chi2) > 0.01, "sampler chi-square", failures);

    let mut per_t = vec![0.0; ntc];
    for (k, m) in mass.iter().enumerate() {
        per_t[k % ntc] += m;
    }
    let cdf = |t: f64| {
        let j = ts.partition_point(|&v| v <= t).clamp(1, ntc) - 1;
        let below: f64 = per_t[..j].iter().sum();
        (below + per_t[j] * (t - ts[j]) / (ts[j + 1] - ts[j])) / total
    };
    let mut times: Vec<f64> = events.iter().map(|e| e.1).collect();
    times.sort_by(f64::total_cmp);
    let mut d: f64 = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let f = cdf(t);
        d = d.max((f - k as f64 / n as f64).abs()).max(((k + 1) as f64 / n as f64 - f).abs());
    }
    let x = d * (n as f64).sqrt();
    let p: f64 = 2.0 * (1..100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * x * x).exp()).sum::<f64>();
    check(p > 0.01, "sampler KS", failures);
}

fn determinism(out: &Path, failures: &mut Vec<String>) -> Result<usize, String> {
    let mut cfg: ExperimentConfig = toml::from_str(
        r#"
        [horizontal]
        l_y = [15.0]
        n_coords = 151
        n_times = 1201
        samples = 500
        [trajectories]
        n = 3000
        n_coords = 61
        n_times = 61
        bootstrap = 20
        "#,
    )
    .map_err(|e| e.to_string())?;
    let mut compared = 0;
    for scenario in [Scenario::Horizontal, Scenario::Trajectories] {
        let mut hashes = Vec::new();
        for threads in [1, 3] {
            cfg.threads = Some(threads);
            let (_, rec) = run_scenario(scenario, &cfg, &out.join(format!("t{threads}")), "acceptance").map_err(|e| e.to_string())?;
            // the manifest also records wall-clock timings, so compare products only
            hashes.push(rec.products);
        }
        compared += hashes[0].len();
        check(!hashes[0].is_empty() && hashes[0] == hashes[1], "hash equality across thread counts", failures);
    }
    Ok(compared)
}

fn properties(out: &Path) -> Outcome {
    let mut failures = Vec::new();
    normalization(&mut failures);
    continuity_and_mirror(&mut failures);
    time_translation(&mut failures);
    crank_nicolson(&mut failures);
    no_crossing(&mut failures);
    sampler(&mut failures);
    let products = determinism(out, &mut failures)?;
    failures.dedup();
    let detail = if failures.is_empty() {
        format!(
            "normalization, continuity, mirror symmetry, time translation, Crank-Nicolson norm, 1000 no-crossing pairs, chi-square and KS, {products} product hashes equal for 1 and 3 threads"
        )
    } else {
        format!("failed: {}", failures.join(", "))
    };
    Ok((failures.is_empty(), detail))
}

fn report(n: u32, outcome: Outcome, failed: &mut bool) {
    let (ok, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    *failed |= !ok;
    println!("criterion {n} {}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |n: u32| selected.is_empty() || selected.contains(&n);
    let dir = tempfile::tempdir().expect("tempdir");
    let out = dir.path();
    let mut failed = false;

    if want(1) {
        report(1, vertical(out), &mut failed);
    }
    let mut gray = None;
    if want(2) || want(5) {
        let outcome = horizontal(out, &mut gray);
        if want(2) {
            report(2, outcome, &mut failed);
        }
    }
    if want(3) || want(4) {
        match trajectories(out) {
            Ok((c3, c4)) => {
                if want(3) {
                    report(3, c3, &mut failed);
                }
                if want(4) {
                    report(4, c4, &mut failed);
                }
            }
            Err(e) => {
                for n in [3, 4].into_iter().filter(|&n| want(n)) {
                    report(n, Err(e.clone()), &mut failed);
                }
            }
        }
    }
    if want(5) {
        report(5, gray_region(&gray), &mut failed);
    }
    if want(6) {
        report(6, kappa_sweep(out), &mut failed);
    }
    if want(7) {
        report(7, pab(out), &mut failed);
    }
    if want(8) {
        report(8, properties(&out.join("determinism")), &mut failed);
    }
    if failed {
        std::process::exit(1);
    }
}
