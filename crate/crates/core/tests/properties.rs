use proptest::prelude::*;
use qarrival_core::grid::linspace;
use qarrival_core::intrinsic::*;
use qarrival_core::model::SlitParameters;
use qarrival_core::observables::*;
use qarrival_core::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

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

// fourth-order centred difference
fn d4(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn continuity_residual(
        s in 3.0..15.0f64, sx in 0.2..2.0f64, sy in 0.3..1.5f64, ux in 0.0..100.0f64, uy in -5.0..5.0f64,
        t in 0.05..2.0f64, rx in -1.5..1.5f64, ry in -1.0..1.0f64,
    ) {
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
        prop_assert!((drho + djx + djy).abs() <= 1e-5 * scale, "{} {} {}", drho, djx, djy);
    }

    #[test]
    fn packet_normalization(x0 in -5.0..5.0f64, u in -50.0..50.0f64, sigma in 0.05..3.0f64, t in 0.0..5.0f64) {
        let p = GaussianPacket1D::new(x0, u, sigma).unwrap();
        let a = UnitSystem::helium().alpha;
        let (c, w) = (p.center(t), p.width(a, t));
        let xs = linspace(c - 12.0 * w, c + 12.0 * w, 4001);
        let d: Vec<f64> = xs.iter().map(|&x| p.density(a, x, t)).collect();
        prop_assert!((quadrature::trapezoid(&xs, &d) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mirror_symmetry(
        s in 3.0..15.0f64, sx in 0.2..2.0f64, sy in 0.3..1.5f64, ux in 0.0..100.0f64,
        t in 0.0..3.0f64, x in -2.0..2.0f64, y in 0.0..30.0f64,
    ) {
        let st = state(s, sx, sy, ux, 0.0);
        let (up, down) = (st.density(x, y, t), st.density(x, -y, t));
        prop_assert!((up - down).abs() <= 1e-6 * up.max(down).max(1e-300));
        let (ju, jd) = (st.current_at(x, y, t), st.current_at(x, -y, t));
        // natural current scale ρα/σ bounds the rounding floor
        let floor = 1e-12 * up * st.alpha() / sy.min(sx);
        prop_assert!((ju.jy + jd.jy).abs() <= 1e-6 * ju.jy.abs() + floor);
        prop_assert!((ju.jx - jd.jx).abs() <= 1e-6 * ju.jx.abs() + floor);
    }

    #[test]
    fn local_means_are_scale_free(scale in 1e-6..1e6f64) {
        let grid = SpaceTimeGrid::uniform([-3.0, 3.0], 31, [0.0, 5.0], 101).unwrap();
        let f = |x: f64, t: f64| (-(x - t + 2.0).powi(2)).exp() * t * (-t).exp() + 1e-6;
        let d: Vec<f64> = grid.screen_coords.iter().flat_map(|&x| grid.times.iter().map(move |&t| f(x, t))).collect();
        let d2: Vec<f64> = d.iter().map(|v| v * scale).collect();
        let a = JointDistribution::from_unnormalized(grid.clone(), d, ProposalTag::Std, Source::Analytic).unwrap();
        let b = JointDistribution::from_unnormalized(grid, d2, ProposalTag::Std, Source::Analytic).unwrap();
        let (ca, cb) = (local_mean_arrival_time(&a), local_mean_arrival_time(&b));
        for (x, y) in ca.mean_time.iter().zip(&cb.mean_time) {
            prop_assert!((x.unwrap() - y.unwrap()).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn contour_matches_real_axis(sigma in 0.3..1.5f64, u in -20.0..20.0f64, l in 1.0..30.0f64, t in 0.02..6.0f64) {
        let p = GaussianPacket1D::new(0.0, u, sigma).unwrap();
        let a = UnitSystem::helium().alpha;
        let comps = [p.momentum_component(a, t, l)];
        let fast = half_line_amplitude(&comps, a).unwrap();
        let slow = half_line_amplitude_reference(&comps, a).unwrap();
        let scale = (sigma).sqrt().recip();
        prop_assert!((fast - slow).norm() < 1e-8 * scale, "{} vs {}", fast, slow);
    }
}

#[test]
fn vertical_joints_are_mirror_symmetric() {
    let st = TwoSlitState::paper_default();
    let screen = ScreenGeometry::vertical(300_000.0, [-3000.0, 3000.0]).unwrap();
    let grid = SpaceTimeGrid::uniform([-3000.0, 3000.0], 401, [90.0, 110.0], 41).unwrap();
    let n = grid.n_coords();
    for jd in [standard_joint(&st, &screen, &grid).unwrap(), flux_joint(&st, &screen, &grid).unwrap()] {
        let peak = jd.density.iter().cloned().fold(0.0, f64::max);
        for i in 0..n / 2 {
            for j in 0..grid.n_times() {
                assert!((jd.at(i, j) - jd.at(n - 1 - i, j)).abs() <= 1e-6 * peak);
            }
        }
    }
}

fn test_joint() -> JointDistribution {
    let grid = SpaceTimeGrid::uniform([-4.0, 4.0], 21, [0.0, 8.0], 41).unwrap();
    let d: Vec<f64> = grid
        .screen_coords
        .iter()
        .flat_map(|&x| grid.times.iter().map(move |&t| (1.0 + (2.0 * x).cos().powi(2)) * (-(x * x) / 4.0).exp() * t * t * (-t).exp()))
        .collect();
    JointDistribution::from_unnormalized(grid, d, ProposalTag::Qf, Source::Analytic).unwrap()
}

fn cell_counts(jd: &JointDistribution, events: &[(f64, f64)]) -> Vec<f64> {
    let xs = &jd.grid.screen_coords;
    let ts = &jd.grid.times;
    let ntc = ts.len() - 1;
    let mut c = vec![0.0; (xs.len() - 1) * ntc];
    for &(x, t) in events {
        let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1) - 1;
        let j = ts.partition_point(|&v| v <= t).clamp(1, ts.len() - 1) - 1;
        c[i * ntc + j] += 1.0;
    }
    c
}

#[test]
fn sampler_passes_chi_square() {
    let jd = test_joint();
    let n = 100_000;
    let events = sample_events(&jd, n, 2024).unwrap();
    let mass = cell_masses(&jd);
    let total: f64 = mass.iter().sum();
    let counts = cell_counts(&jd, &events);
    let (mut chi2, mut bins) = (0.0, 0usize);
    let (mut rest_obs, mut rest_exp) = (0.0, 0.0);
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
    let p = ChiSquared::new((bins - 1) as f64).unwrap().sf(chi2);
    assert!(p > 0.01, "chi2 {chi2} over {bins} bins, p = {p}");
}

#[test]
fn sampler_passes_ks_on_arrival_times() {
    let jd = test_joint();
    let n = 100_000;
    let mut ts: Vec<f64> = sample_events(&jd, n, 77).unwrap().into_iter().map(|e| e.1).collect();
    ts.sort_by(f64::total_cmp);
    let mass = cell_masses(&jd);
    let ntc = jd.grid.n_times() - 1;
    let mut per_t = vec![0.0; ntc];
    for (k, m) in mass.iter().enumerate() {
        per_t[k % ntc] += m;
    }
    let total: f64 = per_t.iter().sum();
    let times = &jd.grid.times;
    let cdf = |t: f64| {
        let j = times.partition_point(|&v| v <= t).clamp(1, ntc) - 1;
        let below: f64 = per_t[..j].iter().sum();
        (below + per_t[j] * (t - times[j]) / (times[j + 1] - times[j])) / total
    };
    let mut d: f64 = 0.0;
    for (k, &t) in ts.iter().enumerate() {
        let f = cdf(t);
        d = d.max((f - k as f64 / n as f64).abs()).max(((k + 1) as f64 / n as f64 - f).abs());
    }
    let x = d * (n as f64).sqrt();
    let p: f64 = 2.0 * (1..100).map(|k| (-1f64).powi(k - 1) * (-2.0 * (k * k) as f64 * x * x).exp()).sum::<f64>();
    assert!(p > 0.01, "KS D = {d}, p = {p}");
}

#[test]
fn sampled_histograms_converge_as_inverse_root_n() {
    let jd = test_joint();
    let mass = cell_masses(&jd);
    let total: f64 = mass.iter().sum();
    let tv_at = |n: usize| {
        (0..8)
            .map(|seed| {
                let c = cell_counts(&jd, &sample_events(&jd, n, 500 + seed).unwrap());
                0.5 * c.iter().zip(&mass).map(|(c, m)| (c / n as f64 - m / total).abs()).sum::<f64>()
            })
            .sum::<f64>()
            / 8.0
    };
    let tv: Vec<f64> = [10_000, 100_000, 1_000_000].iter().map(|&n| tv_at(n)).collect();
    for w in tv.windows(2) {
        let ratio = w[0] / w[1];
        assert!((2.4..4.2).contains(&ratio), "{tv:?}");
    }
}
