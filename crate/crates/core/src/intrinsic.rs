//! Detector-free arrival proposals: semiclassical, standard (Kijowski) and
//! quantum flux.

use num_complex::Complex64;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{JointDistribution, Orientation, ProposalTag, ScreenGeometry, Source, SpaceTimeGrid, TimeDistribution};
use crate::model::{GaussComponent, GaussianPacket1D, TwoSlitState};
use crate::quadrature::{adaptive_complex, adaptive_real};

/// One factor of the separable state, as seen from a screen.
#[derive(Debug, Clone, Copy)]
pub enum Factor<'a> {
    Single(&'a GaussianPacket1D, f64),
    Pair(&'a TwoSlitState),
}

impl Factor<'_> {
    pub fn alpha(&self) -> f64 {
        match self {
            Factor::Single(_, a) => *a,
            Factor::Pair(st) => st.alpha(),
        }
    }

    /// Mean of |f|² over a node's trapezoid cell. Exact for a single Gaussian,
    /// so that early, narrow packets keep their mass on coarse grids; the
    /// slit pair is sampled at the node.
    pub fn cell_density(&self, cell: [f64; 3], t: f64) -> f64 {
        let [lo, s, hi] = cell;
        match self {
            Factor::Single(p, a) if hi > lo => {
                let n = Normal::new(p.center(t), p.width(*a, t)).expect("positive width");
                let m = if lo > p.center(t) { n.sf(lo) - n.sf(hi) } else { n.cdf(hi) - n.cdf(lo) };
                m / (hi - lo)
            }
            _ => self.density(s, t),
        }
    }

    pub fn amplitude(&self, s: f64, t: f64) -> Complex64 {
        match self {
            Factor::Single(p, a) => p.amplitude(*a, s, t),
            Factor::Pair(st) => st.transverse(s, t),
        }
    }

    pub fn density(&self, s: f64, t: f64) -> f64 {
        match self {
            Factor::Single(p, a) => p.density(*a, s, t),
            Factor::Pair(st) => st.transverse_density(s, t),
        }
    }

    pub fn gradient(&self, s: f64, t: f64) -> Complex64 {
        match self {
            Factor::Single(p, a) => p.gradient(*a, s, t),
            Factor::Pair(st) => st.transverse_gradient(s, t),
        }
    }

    /// α Im[f* ∂f].
    pub fn current(&self, s: f64, t: f64) -> f64 {
        match self {
            Factor::Single(p, a) => p.current(*a, s, t),
            Factor::Pair(st) => st.transverse_current(s, t),
        }
    }

    /// Momentum amplitude times e^{ikL} as a sum of Gaussians in k.
    pub fn components(&self, t: f64, l: f64) -> Vec<GaussComponent> {
        match self {
            Factor::Single(p, a) => vec![p.momentum_component(*a, t, l)],
            Factor::Pair(st) => st.transverse_components(t, l).to_vec(),
        }
    }

    pub fn momentum_density(&self, k: f64) -> f64 {
        match self {
            Factor::Single(p, a) => p.momentum_density(*a, k),
            Factor::Pair(st) => st.transverse_momentum(k, 0.0).norm_sqr(),
        }
    }

    /// Momentum mass in [lo, hi].
    pub fn momentum_mass(&self, lo: f64, hi: f64) -> f64 {
        if !(hi > lo) {
            return 0.0;
        }
        match self {
            Factor::Single(p, a) => {
                let n = Normal::new(p.k0(*a), p.sigma_k()).expect("positive width");
                n.cdf(hi) - n.cdf(lo)
            }
            Factor::Pair(st) => {
                let p = &st.transverse_up;
                let a = st.alpha();
                let (c, w) = (p.k0(a), p.sigma_k());
                let lo = lo.max(c - 12.0 * w).max(-(st.transverse_down.k0(a).abs() + 12.0 * w));
                let hi = hi.min(c + 12.0 * w).min(st.transverse_down.k0(a).abs() + 12.0 * w);
                if !(hi > lo) {
                    return 0.0;
                }
                // cos²(ks) fringes: keep several panels per period
                let period = PI / st.slit_half_separation();
                let panels = (((hi - lo) / period).ceil() as usize).max(4);
                adaptive_real(lo, hi, panels, 1e-12, 1 << 16, |k| self.momentum_density(k)).unwrap_or(f64::NAN)
            }
        }
    }
}

/// (normal factor, parallel factor) for a screen.
pub fn factors<'a>(st: &'a TwoSlitState, screen: &ScreenGeometry) -> (Factor<'a>, Factor<'a>) {
    let single = Factor::Single(&st.longitudinal, st.alpha());
    let pair = Factor::Pair(st);
    match screen.orientation {
        Orientation::Vertical => (single, pair),
        Orientation::Horizontal => (pair, single),
    }
}

// ---------------------------------------------------------------------------
// Half-line momentum integrals

/// ∫₀^∞ √q exp(−a q² + b q + c) dq on a deformed contour: from 0 along the
/// perpendicular to the steepest-descent line, then out along that line.
fn contour_half_line(g: &GaussComponent) -> Result<Complex64> {
    let a = g.a;
    let abs_a = a.norm();
    let theta = 0.5 * a.arg();
    let d = Complex64::from_polar(1.0, -theta);
    let kstar = g.b / (2.0 * a);
    let e_star = g.b * g.b / (4.0 * a) + g.c;
    let rho = kstar * d.conj();
    let r_p = -rho.re;
    let s = rho.im;
    let cut = 45.0;
    let mut total = Complex64::new(0.0, 0.0);

    if s != 0.0 {
        // |integrand| falls like exp(−|a| s'(2|s| − s')) away from k = 0
        let s_abs = s.abs();
        let s_end = if s_abs * s_abs > cut / abs_a {
            s_abs - (s_abs * s_abs - cut / abs_a).sqrt()
        } else {
            s_abs
        };
        let negligible = g.c.re + 1.5 * s_end.ln() < -80.0;
        if !negligible {
            let dir = Complex64::i() * d * s.signum();
            let seg = adaptive_complex(0.0, s_end.sqrt(), 4, 1e-13, 1 << 16, |w| {
                let k = dir * (w * w);
                k.sqrt() * (-a * k * k + g.b * k + g.c).exp() * (2.0 * w)
            })?;
            total += seg * dir;
        }
    }

    let r_max = (cut / abs_a).sqrt();
    if r_p < r_max {
        let ray = if r_p >= -r_max {
            adaptive_complex(0.0, (r_max - r_p).sqrt(), 4, 1e-13, 1 << 16, |w| {
                let r = r_p + w * w;
                let k = kstar + d * r;
                k.sqrt() * (e_star - abs_a * r * r).exp() * (2.0 * w)
            })?
        } else {
            adaptive_complex(-r_max, r_max, 4, 1e-13, 1 << 16, |r| {
                let k = kstar + d * r;
                k.sqrt() * (e_star - abs_a * r * r).exp()
            })?
        };
        total += ray * d;
    }
    Ok(total)
}

/// (2π)^{-1/2} √α ∫₀^∞ √q Σ g(q) dq.
pub fn half_line_amplitude(components: &[GaussComponent], alpha: f64) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    for g in components {
        sum += contour_half_line(g)?;
    }
    Ok(sum * (alpha / (2.0 * PI)).sqrt())
}

/// Same integral along the real axis. Slow for large phases; kept as a
/// reference implementation.
pub fn half_line_amplitude_reference(components: &[GaussComponent], alpha: f64) -> Result<Complex64> {
    let mut hi: f64 = 0.0;
    for g in components {
        hi = hi.max(g.real_center().max(0.0) + 11.0 * g.real_sigma());
    }
    let phase_rate = components
        .iter()
        .map(|g| 2.0 * g.a.im.abs() * hi + g.b.im.abs())
        .fold(0.0, f64::max);
    // panels in v = √q; local rate 2v·dφ/dq
    let panels = ((2.0 * hi.sqrt() * phase_rate * hi.sqrt() / PI).ceil() as usize).max(32);
    let v = adaptive_complex(0.0, hi.sqrt(), panels, 1e-12, 1 << 22, |v| {
        let q = v * v;
        let s: Complex64 = components.iter().map(|g| g.eval(q)).sum();
        s * (2.0 * v * v)
    })?;
    Ok(v * (alpha / (2.0 * PI)).sqrt())
}

/// Kijowski amplitudes (φ⁺, φ⁻) of the normal factor at the screen line.
pub fn kijowski_normal_amplitudes(st: &TwoSlitState, screen: &ScreenGeometry, t: f64) -> Result<(Complex64, Complex64)> {
    let (normal, _) = factors(st, screen);
    let comps = normal.components(t, screen.offset);
    let mirrored: Vec<_> = comps.iter().map(|g| g.mirrored()).collect();
    let alpha = st.alpha();
    let (pos, neg) = (half_line_amplitude(&comps, alpha)?, half_line_amplitude(&mirrored, alpha)?);
    if screen.normal_sign > 0.0 {
        Ok((pos, neg))
    } else {
        Ok((neg, pos))
    }
}

/// (ψ⁺_S, ψ⁻_S) at screen coordinate `s` and time `t`.
pub fn kijowski_screen_amplitudes(st: &TwoSlitState, screen: &ScreenGeometry, s: f64, t: f64) -> Result<(Complex64, Complex64)> {
    let (_, parallel) = factors(st, screen);
    let (p, m) = kijowski_normal_amplitudes(st, screen, t)?;
    let f = parallel.amplitude(s, t);
    Ok((f * p, f * m))
}

// ---------------------------------------------------------------------------
// Separable joint evaluation

/// Trapezoid cell of each node: (lower edge, node, upper edge).
pub fn cell_bounds(axis: &[f64]) -> Vec<[f64; 3]> {
    let n = axis.len();
    (0..n)
        .map(|i| {
            let lo = if i == 0 { axis[0] } else { 0.5 * (axis[i - 1] + axis[i]) };
            let hi = if i + 1 == n { axis[n - 1] } else { 0.5 * (axis[i] + axis[i + 1]) };
            [lo, axis[i], hi]
        })
        .collect()
}

fn separable_joint(
    st: &TwoSlitState,
    screen: &ScreenGeometry,
    grid: &SpaceTimeGrid,
    normal: &[f64],
    tag: ProposalTag,
) -> Result<JointDistribution> {
    let (_, parallel) = factors(st, screen);
    let cells = cell_bounds(&grid.screen_coords);
    let density: Vec<f64> = cells
        .par_iter()
        .flat_map_iter(|&cell| {
            grid.times
                .iter()
                .zip(normal)
                .map(move |(&t, &g)| if g == 0.0 { 0.0 } else { parallel.cell_density(cell, t) * g })
        })
        .collect();
    if density.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroMass { what: tag.to_string() });
    }
    JointDistribution::from_unnormalized(grid.clone(), density, tag, Source::Analytic)
}

fn check_screen_faces_away(screen: &ScreenGeometry) -> Result<f64> {
    let ln = screen.offset * screen.normal_sign;
    if ln == 0.0 {
        return Err(Error::invalid("offset", "screen through the origin has no arrival geometry"));
    }
    if ln < 0.0 {
        return Err(Error::invalid("normal_sign", "normal must point away from the source"));
    }
    Ok(ln)
}

// ---------------------------------------------------------------------------
// Semiclassical

/// Semiclassical arrival density of a single packet at x = L, normalized on
/// the given window.
pub fn semiclassical_time_1d(packet: &GaussianPacket1D, alpha: f64, l: f64, times: &[f64]) -> Result<TimeDistribution> {
    let dist = l - packet.x0;
    if l == 0.0 || dist == 0.0 {
        return Err(Error::invalid("L", "must differ from zero and from the packet centre"));
    }
    if times.iter().any(|&t| !(t + packet.elapsed > 0.0)) {
        return Err(Error::invalid("times", "must be positive"));
    }
    let n = Normal::new(packet.k0(alpha), packet.sigma_k()).expect("positive width");
    let t_lo = times[0] + packet.elapsed;
    let t_hi = times[times.len() - 1] + packet.elapsed;
    let (k1, k2) = (dist / (alpha * t_hi), dist / (alpha * t_lo));
    let (klo, khi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
    let inside = n.cdf(khi) - n.cdf(klo);
    let reachable = if dist > 0.0 { 1.0 - n.cdf(0.0) } else { n.cdf(0.0) };
    let captured = inside / reachable;
    if !(captured >= 0.999) {
        return Err(Error::WindowTooSmall { captured });
    }
    let density = times
        .iter()
        .map(|&t| {
            let tt = t + packet.elapsed;
            dist.abs() / (alpha * tt * tt) * packet.momentum_density(alpha, dist / (alpha * tt))
        })
        .collect();
    TimeDistribution::normalized(times.to_vec(), density)
}

/// Unnormalized Π_SC(t | S) on the screen span.
pub fn semiclassical_time_unnormalized(st: &TwoSlitState, screen: &ScreenGeometry, t: f64) -> Result<f64> {
    let ln = check_screen_faces_away(screen)?;
    let (normal, parallel) = factors(st, screen);
    let alpha = st.alpha();
    let tt = t + st.longitudinal.elapsed;
    if !(tt > 0.0) {
        return Ok(0.0);
    }
    let k_n = screen.offset / (alpha * tt);
    let frac = parallel.momentum_mass(screen.span[0] / (alpha * tt), screen.span[1] / (alpha * tt));
    Ok(ln / (alpha * tt * tt) * normal.momentum_density(k_n) * frac)
}

/// Fraction of the semiclassical arrival mass (all t > 0, whole line) that
/// lands inside the grid window and span.
pub fn semiclassical_capture(st: &TwoSlitState, screen: &ScreenGeometry, grid: &SpaceTimeGrid) -> Result<f64> {
    let (normal, _) = factors(st, screen);
    let alpha = st.alpha();
    let elapsed = st.longitudinal.elapsed;
    let l = screen.offset;
    let k_edge = if elapsed > 0.0 { l / (alpha * elapsed) } else { f64::INFINITY.copysign(l) };
    let total = if l > 0.0 {
        normal.momentum_mass(0.0, k_edge.min(1e12))
    } else {
        normal.momentum_mass(k_edge.max(-1e12), 0.0)
    };
    let (t0, t1) = (grid.times[0], grid.times[grid.n_times() - 1]);
    let panels = 64;
    let inside = adaptive_real(t0, t1, panels, 1e-10, 1 << 16, |t| {
        semiclassical_time_unnormalized(st, screen, t).unwrap_or(0.0)
    })?;
    Ok((inside / total).min(1.0))
}

/// P_SC(s, t) = Π_SC(t | S)·|ψ∥(s, t)|² / ∫_S |ψ∥(s', t)|² ds'.
pub fn semiclassical_joint(st: &TwoSlitState, screen: &ScreenGeometry, grid: &SpaceTimeGrid) -> Result<JointDistribution> {
    check_screen_faces_away(screen)?;
    let (_, parallel) = factors(st, screen);
    let ws = crate::quadrature::trapezoid_weights(&grid.screen_coords);
    let normal: Vec<f64> = grid
        .times
        .par_iter()
        .map(|&t| {
            let pi = semiclassical_time_unnormalized(st, screen, t)?;
            let col: f64 = grid.screen_coords.iter().zip(&ws).map(|(&s, w)| w * parallel.density(s, t)).sum();
            Ok(if col > 0.0 { pi / col } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    if normal.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptySupport);
    }
    let capture = semiclassical_capture(st, screen, grid)?;
    Ok(separable_joint(st, screen, grid, &normal, ProposalTag::Sc)?.with_capture(capture, "semiclassical"))
}

// ---------------------------------------------------------------------------
// Standard (Kijowski)

/// |φ⁺|² + |φ⁻|² of the normal factor at each time.
pub fn standard_normal_density(st: &TwoSlitState, screen: &ScreenGeometry, times: &[f64]) -> Result<Vec<f64>> {
    times
        .par_iter()
        .map(|&t| {
            let (p, m) = kijowski_normal_amplitudes(st, screen, t)?;
            Ok(p.norm_sqr() + m.norm_sqr())
        })
        .collect()
}

pub fn standard_joint(st: &TwoSlitState, screen: &ScreenGeometry, grid: &SpaceTimeGrid) -> Result<JointDistribution> {
    let normal = standard_normal_density(st, screen, &grid.times)?;
    let capture = semiclassical_capture(st, screen, grid)?;
    Ok(separable_joint(st, screen, grid, &normal, ProposalTag::Std)?.with_capture(capture, "semiclassical estimate"))
}

// ---------------------------------------------------------------------------
// Quantum flux

/// J·n of the normal factor at the screen line (the parallel density is
/// factored out).
pub fn normal_current(st: &TwoSlitState, screen: &ScreenGeometry, t: f64) -> f64 {
    let (normal, _) = factors(st, screen);
    screen.normal_sign * normal.current(screen.offset, t)
}

fn resolved_normal_current(st: &TwoSlitState, screen: &ScreenGeometry, times: &[f64]) -> Result<Vec<f64>> {
    let j: Vec<f64> = times.par_iter().map(|&t| normal_current(st, screen, t)).collect();
    // sign changes hidden between samples show up at the midpoints
    let mut missed = 0;
    for (w, jw) in times.windows(2).zip(j.windows(2)) {
        let jm = normal_current(st, screen, 0.5 * (w[0] + w[1]));
        let coarse = (jw[0] * jw[1] < 0.0) as usize;
        let fine = (jw[0] * jm < 0.0) as usize + (jm * jw[1] < 0.0) as usize;
        if fine > coarse + 1 || (fine == 2 && coarse == 0) {
            missed += fine - coarse;
        }
    }
    if missed > 0 {
        return Err(Error::UnresolvedSignChanges { missed });
    }
    Ok(j)
}

pub fn flux_joint(st: &TwoSlitState, screen: &ScreenGeometry, grid: &SpaceTimeGrid) -> Result<JointDistribution> {
    let j = resolved_normal_current(st, screen, &grid.times)?;
    let normal: Vec<f64> = j.iter().map(|v| v.abs()).collect();
    let capture = semiclassical_capture(st, screen, grid)?;
    Ok(separable_joint(st, screen, grid, &normal, ProposalTag::Qf)?.with_capture(capture, "semiclassical estimate"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Plus,
    Minus,
}

pub fn flux_joint_signed(st: &TwoSlitState, screen: &ScreenGeometry, grid: &SpaceTimeGrid, side: Side) -> Result<JointDistribution> {
    let j = resolved_normal_current(st, screen, &grid.times)?;
    let (sign, tag) = match side {
        Side::Plus => (1.0, ProposalTag::QfPlus),
        Side::Minus => (-1.0, ProposalTag::QfMinus),
    };
    let normal: Vec<f64> = j.iter().map(|v| (sign * v).max(0.0)).collect();
    separable_joint(st, screen, grid, &normal, tag)
}

/// Π_QF(t | S) by direct quadrature of |J·n| along the screen span,
/// normalized on the window.
pub fn flux_time_distribution(st: &TwoSlitState, screen: &ScreenGeometry, times: &[f64]) -> Result<TimeDistribution> {
    let (_, parallel) = factors(st, screen);
    let density: Vec<f64> = times
        .par_iter()
        .map(|&t| {
            let j = normal_current(st, screen, t).abs();
            let m = span_mass(&parallel, screen.span, t);
            j * m
        })
        .collect();
    TimeDistribution::normalized(times.to_vec(), density)
}

/// ∫_span |f(s, t)|² ds, exact for a single Gaussian.
pub fn span_mass(f: &Factor, span: [f64; 2], t: f64) -> f64 {
    match f {
        Factor::Single(p, a) => {
            let n = Normal::new(p.center(t), p.width(*a, t)).expect("positive width");
            n.cdf(span[1]) - n.cdf(span[0])
        }
        Factor::Pair(st) => {
            let w = st.transverse_up.width(st.alpha(), t);
            let c = st.slit_half_separation() + st.transverse_up.u.abs() * (t + st.transverse_up.elapsed);
            let lo = span[0].max(-c - 12.0 * w);
            let hi = span[1].min(c + 12.0 * w);
            if !(hi > lo) {
                return 0.0;
            }
            adaptive_real(lo, hi, 64, 1e-12, 1 << 18, |s| f.density(s, t)).unwrap_or(f64::NAN)
        }
    }
}

/// Π_STD(t | S) with the real-axis half-line quadrature and exact span
/// integration, normalized on the window.
pub fn standard_time_distribution_reference(st: &TwoSlitState, screen: &ScreenGeometry, times: &[f64]) -> Result<TimeDistribution> {
    let (normal, parallel) = factors(st, screen);
    let alpha = st.alpha();
    let density = times
        .par_iter()
        .map(|&t| {
            let comps = normal.components(t, screen.offset);
            let mirrored: Vec<_> = comps.iter().map(|g| g.mirrored()).collect();
            let p = half_line_amplitude_reference(&comps, alpha)?;
            let m = half_line_amplitude_reference(&mirrored, alpha)?;
            Ok((p.norm_sqr() + m.norm_sqr()) * span_mass(&parallel, screen.span, t))
        })
        .collect::<Result<Vec<f64>>>()?;
    TimeDistribution::normalized(times.to_vec(), density)
}
