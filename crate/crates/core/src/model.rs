//! Analytic two-slit state: Gaussian packets, amplitudes, gradients and currents.
//!
//! Lengths are in μm, times in ms. The only physical constant is α = ħ/m.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

pub type ComplexAmplitude = Complex64;

/// Reduced Planck constant in J·s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Mass of a metastable helium atom in kg.
pub const HELIUM_MASS: f64 = 6.64e-27;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    /// ħ/m in μm²/ms.
    pub alpha: f64,
}

impl UnitSystem {
    pub fn from_mass(mass_kg: f64) -> Result<Self> {
        if !(mass_kg > 0.0) || !mass_kg.is_finite() {
            return Err(Error::invalid("mass", "must be positive"));
        }
        // m²/s -> μm²/ms
        Ok(UnitSystem {
            alpha: HBAR / mass_kg * 1e9,
        })
    }

    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid("alpha", "must be positive"));
        }
        Ok(UnitSystem { alpha })
    }

    pub fn helium() -> Self {
        UnitSystem {
            alpha: HBAR / HELIUM_MASS * 1e9,
        }
    }
}

impl Default for UnitSystem {
    fn default() -> Self {
        Self::helium()
    }
}

/// Freely evolving 1D Gaussian mode.
///
/// `elapsed` shifts the time origin: the packet evaluated at `t` is the
/// prepared packet at `t + elapsed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPacket1D {
    pub x0: f64,
    pub u: f64,
    pub sigma0: f64,
    #[serde(default)]
    pub elapsed: f64,
}

impl GaussianPacket1D {
    pub fn new(x0: f64, u: f64, sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::invalid("sigma0", "must be positive"));
        }
        if !x0.is_finite() || !u.is_finite() {
            return Err(Error::invalid("x0/u", "must be finite"));
        }
        Ok(GaussianPacket1D {
            x0,
            u,
            sigma0,
            elapsed: 0.0,
        })
    }

    pub fn evolved(&self, tau: f64) -> Self {
        GaussianPacket1D {
            elapsed: self.elapsed + tau,
            ..*self
        }
    }

    /// Central wavenumber u/α.
    pub fn k0(&self, alpha: f64) -> f64 {
        self.u / alpha
    }

    /// Standard deviation of the momentum density in wavenumber units.
    pub fn sigma_k(&self) -> f64 {
        0.5 / self.sigma0
    }

    pub fn complex_width(&self, alpha: f64, t: f64) -> Complex64 {
        let tt = t + self.elapsed;
        Complex64::new(
            self.sigma0,
            alpha * tt / (2.0 * self.sigma0),
        )
    }

    /// Real position spread σ(t).
    pub fn width(&self, alpha: f64, t: f64) -> f64 {
        let tau = alpha * (t + self.elapsed) / (2.0 * self.sigma0 * self.sigma0);
        self.sigma0 * (1.0 + tau * tau).sqrt()
    }

    pub fn center(&self, t: f64) -> f64 {
        self.x0 + self.u * (t + self.elapsed)
    }

    /// log ψ(x, t).
    pub fn log_amplitude(&self, alpha: f64, x: f64, t: f64) -> Complex64 {
        let tt = t + self.elapsed;
        let st = self.complex_width(alpha, t);
        let d = x - self.x0 - self.u * tt;
        let k0 = self.k0(alpha);
        -0.25 * (2.0 * PI).ln() - 0.5 * st.ln() - d * d / (4.0 * self.sigma0 * st)
            + Complex64::i() * k0 * (x - self.x0 - 0.5 * self.u * tt)
    }

    pub fn amplitude(&self, alpha: f64, x: f64, t: f64) -> Complex64 {
        self.log_amplitude(alpha, x, t).exp()
    }

    /// ∂ₓψ/ψ.
    pub fn log_derivative(&self, alpha: f64, x: f64, t: f64) -> Complex64 {
        let st = self.complex_width(alpha, t);
        let d = x - self.x0 - self.u * (t + self.elapsed);
        -d / (2.0 * self.sigma0 * st) + Complex64::new(0.0, self.k0(alpha))
    }

    pub fn gradient(&self, alpha: f64, x: f64, t: f64) -> Complex64 {
        self.amplitude(alpha, x, t) * self.log_derivative(alpha, x, t)
    }

    pub fn density(&self, alpha: f64, x: f64, t: f64) -> f64 {
        let s = self.width(alpha, t);
        let d = x - self.center(t);
        (-d * d / (2.0 * s * s)).exp() / ((2.0 * PI).sqrt() * s)
    }

    /// Current density α Im[ψ* ∂ψ].
    pub fn current(&self, alpha: f64, x: f64, t: f64) -> f64 {
        alpha * self.density(alpha, x, t) * self.log_derivative(alpha, x, t).im
    }

    /// Momentum-space amplitude at wavenumber k, normalized in k.
    pub fn momentum_amplitude(&self, alpha: f64, k: f64, t: f64) -> Complex64 {
        self.momentum_component(alpha, t, 0.0).eval(k)
    }

    pub fn momentum_density(&self, alpha: f64, k: f64) -> f64 {
        let s = self.sigma_k();
        let d = k - self.k0(alpha);
        (-d * d / (2.0 * s * s)).exp() / ((2.0 * PI).sqrt() * s)
    }

    /// φ̃(k, t)·e^{ikL} written as exp(−a k² + b k + c).
    pub fn momentum_component(&self, alpha: f64, t: f64, l: f64) -> GaussComponent {
        let tt = t + self.elapsed;
        let s2 = self.sigma0 * self.sigma0;
        let k0 = self.k0(alpha);
        GaussComponent {
            a: Complex64::new(s2, 0.5 * alpha * tt),
            b: Complex64::new(2.0 * s2 * k0, l - self.x0),
            c: Complex64::new(-s2 * k0 * k0 + 0.25 * (2.0 * s2 / PI).ln(), 0.0),
        }
    }
}

/// Complex Gaussian exp(−a k² + b k + c) with Re a > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussComponent {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
}

impl GaussComponent {
    pub fn eval(&self, k: f64) -> Complex64 {
        (-self.a * k * k + self.b * k + self.c).exp()
    }

    pub fn eval_complex(&self, k: Complex64) -> Complex64 {
        (-self.a * k * k + self.b * k + self.c).exp()
    }

    pub fn scaled(self, factor: f64) -> Self {
        GaussComponent {
            c: self.c + factor.ln(),
            ..self
        }
    }

    /// Component as a function of q = −k.
    pub fn mirrored(self) -> Self {
        GaussComponent { b: -self.b, ..self }
    }

    /// Centre of |g| on the real axis.
    pub fn real_center(&self) -> f64 {
        self.b.re / (2.0 * self.a.re)
    }

    /// Standard deviation of |g|² on the real axis.
    pub fn real_sigma(&self) -> f64 {
        0.5 / self.a.re.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentVector {
    pub jx: f64,
    pub jy: f64,
}

/// ψ(x, y, t) = ψₓ(x, t)·[χ⁽¹⁾(y, t) + χ⁽²⁾(y, t)]/√2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSlitState {
    pub longitudinal: GaussianPacket1D,
    pub transverse_up: GaussianPacket1D,
    pub transverse_down: GaussianPacket1D,
    pub units: UnitSystem,
}

/// Parameters of the two-slit setup, in μm and μm/ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlitParameters {
    pub s: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub x0: f64,
}

impl Default for SlitParameters {
    fn default() -> Self {
        SlitParameters {
            s: 10.0,
            sigma_x: 0.04,
            sigma_y: 0.5,
            u_x: 3000.0,
            u_y: 0.0,
            x0: 0.0,
        }
    }
}

impl TwoSlitState {
    pub fn new(
        longitudinal: GaussianPacket1D,
        transverse_up: GaussianPacket1D,
        transverse_down: GaussianPacket1D,
        units: UnitSystem,
    ) -> Result<Self> {
        if transverse_up.sigma0 != transverse_down.sigma0 {
            return Err(Error::invalid("sigma_y", "both slits need the same width"));
        }
        if transverse_up.u.abs() != transverse_down.u.abs() {
            return Err(Error::invalid("u_y", "both slits need the same |u|"));
        }
        if transverse_up.elapsed != transverse_down.elapsed
            || transverse_up.elapsed != longitudinal.elapsed
        {
            return Err(Error::invalid("elapsed", "factors must share a time origin"));
        }
        Ok(TwoSlitState {
            longitudinal,
            transverse_up,
            transverse_down,
            units,
        })
    }

    pub fn from_parameters(p: &SlitParameters, units: UnitSystem) -> Result<Self> {
        let check = |field: &'static str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(field, format!("must be positive, got {v}")))
            }
        };
        check("s", p.s)?;
        check("sigma_x", p.sigma_x)?;
        check("sigma_y", p.sigma_y)?;
        Self::new(
            GaussianPacket1D::new(p.x0, p.u_x, p.sigma_x)?,
            GaussianPacket1D::new(p.s, p.u_y, p.sigma_y)?,
            GaussianPacket1D::new(-p.s, p.u_y, p.sigma_y)?,
            units,
        )
    }

    pub fn paper_default() -> Self {
        Self::from_parameters(&SlitParameters::default(), UnitSystem::helium())
            .expect("default parameters are valid")
    }

    pub fn alpha(&self) -> f64 {
        self.units.alpha
    }

    /// State propagated freely by τ; its t = 0 is the original t = τ.
    pub fn evolved(&self, tau: f64) -> Self {
        TwoSlitState {
            longitudinal: self.longitudinal.evolved(tau),
            transverse_up: self.transverse_up.evolved(tau),
            transverse_down: self.transverse_down.evolved(tau),
            units: self.units,
        }
    }

    pub fn slit_half_separation(&self) -> f64 {
        0.5 * (self.transverse_up.x0 - self.transverse_down.x0)
    }

    /// Y(y, t) = [χ⁽¹⁾ + χ⁽²⁾]/√2.
    pub fn transverse(&self, y: f64, t: f64) -> Complex64 {
        let a = self.alpha();
        (self.transverse_up.amplitude(a, y, t) + self.transverse_down.amplitude(a, y, t))
            * FRAC_1_SQRT_2
    }

    pub fn transverse_gradient(&self, y: f64, t: f64) -> Complex64 {
        let a = self.alpha();
        (self.transverse_up.gradient(a, y, t) + self.transverse_down.gradient(a, y, t))
            * FRAC_1_SQRT_2
    }

    pub fn transverse_density(&self, y: f64, t: f64) -> f64 {
        self.transverse(y, t).norm_sqr()
    }

    /// α Im[Y* ∂Y].
    pub fn transverse_current(&self, y: f64, t: f64) -> f64 {
        self.alpha() * (self.transverse(y, t).conj() * self.transverse_gradient(y, t)).im
    }

    /// Transverse velocity α Im[∂Y/Y] and ln|Y|², evaluated through the
    /// ratio χ⁽²⁾/χ⁽¹⁾ so that neither factor has to be formed when it
    /// underflows.
    pub fn transverse_velocity(&self, y: f64, t: f64) -> (f64, f64) {
        let a = self.alpha();
        let l1 = self.transverse_up.log_amplitude(a, y, t);
        let l2 = self.transverse_down.log_amplitude(a, y, t);
        let d1 = self.transverse_up.log_derivative(a, y, t);
        let d2 = self.transverse_down.log_derivative(a, y, t);
        let (lead, ld, other_d, r) = if l1.re >= l2.re {
            (l1, d1, d2, (l2 - l1).exp())
        } else {
            (l2, d2, d1, (l1 - l2).exp())
        };
        let denom = Complex64::new(1.0, 0.0) + r;
        let v = a * ((ld + other_d * r) / denom).im;
        let log_density = 2.0 * lead.re + denom.norm_sqr().ln() - 2f64.ln();
        (v, log_density)
    }

    pub fn amplitude(&self, x: f64, y: f64, t: f64) -> ComplexAmplitude {
        self.longitudinal.amplitude(self.alpha(), x, t) * self.transverse(y, t)
    }

    pub fn density(&self, x: f64, y: f64, t: f64) -> f64 {
        self.amplitude(x, y, t).norm_sqr()
    }

    pub fn gradient(&self, x: f64, y: f64, t: f64) -> (ComplexAmplitude, ComplexAmplitude) {
        let a = self.alpha();
        let px = self.longitudinal.amplitude(a, x, t);
        let dpx = px * self.longitudinal.log_derivative(a, x, t);
        let yv = self.transverse(y, t);
        let dy = self.transverse_gradient(y, t);
        (dpx * yv, px * dy)
    }

    pub fn current_at(&self, x: f64, y: f64, t: f64) -> CurrentVector {
        let psi = self.amplitude(x, y, t);
        let (gx, gy) = self.gradient(x, y, t);
        let a = self.alpha();
        CurrentVector {
            jx: a * (psi.conj() * gx).im,
            jy: a * (psi.conj() * gy).im,
        }
    }

    /// Momentum amplitude at wavenumbers (kx, ky).
    pub fn momentum_amplitude(&self, kx: f64, ky: f64, t: f64) -> ComplexAmplitude {
        let a = self.alpha();
        self.longitudinal.momentum_amplitude(a, kx, t) * self.transverse_momentum(ky, t)
    }

    pub fn transverse_momentum(&self, k: f64, t: f64) -> Complex64 {
        let a = self.alpha();
        (self.transverse_up.momentum_amplitude(a, k, t)
            + self.transverse_down.momentum_amplitude(a, k, t))
            * FRAC_1_SQRT_2
    }

    /// Components of the transverse momentum amplitude times e^{ikL}.
    pub fn transverse_components(&self, t: f64, l: f64) -> [GaussComponent; 2] {
        let a = self.alpha();
        [
            self.transverse_up.momentum_component(a, t, l).scaled(FRAC_1_SQRT_2),
            self.transverse_down.momentum_component(a, t, l).scaled(FRAC_1_SQRT_2),
        ]
    }
}

pub fn packet_amplitude(p: &GaussianPacket1D, units: &UnitSystem, x: f64, t: f64) -> ComplexAmplitude {
    p.amplitude(units.alpha, x, t)
}

pub fn state_amplitude(st: &TwoSlitState, x: f64, y: f64, t: f64) -> ComplexAmplitude {
    st.amplitude(x, y, t)
}

pub fn state_gradient(st: &TwoSlitState, x: f64, y: f64, t: f64) -> (ComplexAmplitude, ComplexAmplitude) {
    st.gradient(x, y, t)
}

pub fn momentum_amplitude(st: &TwoSlitState, kx: f64, ky: f64, t: f64) -> ComplexAmplitude {
    st.momentum_amplitude(kx, ky, t)
}

pub fn current_at(st: &TwoSlitState, x: f64, y: f64, t: f64) -> CurrentVector {
    st.current_at(x, y, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trapz(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = 0.5 * (f(a) + f(b));
        for i in 1..n {
            s += f(a + i as f64 * h);
        }
        s * h
    }

    #[test]
    fn alpha_from_codata() {
        let u = UnitSystem::helium();
        assert!((u.alpha - 15.882_105_677_710_847).abs() < 1e-9);
        assert!((3000.0 / u.alpha - 188.89).abs() < 0.01);
    }

    #[test]
    fn packet_peak_value() {
        let p = GaussianPacket1D::new(0.0, 0.0, 0.5).unwrap();
        let v = p.amplitude(15.88, 0.0, 0.0).norm();
        assert!((v - (2.0 * PI * 0.25f64).powf(-0.25)).abs() < 1e-12);
        assert!((v - 0.893).abs() < 1e-3);
    }

    #[test]
    fn packet_norm_is_one() {
        let a = UnitSystem::helium().alpha;
        let p = GaussianPacket1D::new(0.0, 0.0, 0.5).unwrap();
        for &t in &[0.0, 0.01, 0.05, 0.1] {
            let n = trapz(|x| p.amplitude(a, x, t).norm_sqr(), -50.0, 50.0, 20000);
            assert!((n - 1.0).abs() < 1e-9, "t={t} n={n}");
        }
        // later times need a window that follows the spreading
        for &t in &[0.5, 1.0, 3.0] {
            let w = 12.0 * p.width(a, t);
            let n = trapz(|x| p.amplitude(a, x, t).norm_sqr(), -w, w, 40000);
            assert!((n - 1.0).abs() < 1e-9, "t={t} n={n}");
        }
    }

    #[test]
    fn packet_moves_at_group_velocity() {
        let a = UnitSystem::helium().alpha;
        let p = GaussianPacket1D::new(0.0, 3000.0, 0.04).unwrap();
        let t = 0.01;
        let mut best = (0.0, 0.0);
        for i in 0..60001 {
            let x = 29.0 + i as f64 * 2e-5 * 1e2 / 1e2;
            let d = p.amplitude(a, x, t).norm_sqr();
            if d > best.1 {
                best = (x, d);
            }
        }
        assert!((best.0 - 30.0).abs() < 1e-3, "{best:?}");
        assert!((p.density(a, 30.0, t) - p.amplitude(a, 30.0, t).norm_sqr()).abs() < 1e-9);
    }

    #[test]
    fn log_derivative_at_rest_is_real_gaussian_slope() {
        let p = GaussianPacket1D::new(1.0, 0.0, 0.5).unwrap();
        let d = p.log_derivative(15.88, 2.0, 0.0);
        assert!((d.re + 1.0 / (2.0 * 0.25)).abs() < 1e-14);
        assert_eq!(d.im, 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let st = TwoSlitState::paper_default();
        let mut seed = 12345u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let h = 1e-4;
        for _ in 0..100 {
            let t = 0.05 + 2.0 * rnd();
            let x = st.longitudinal.center(t) + (rnd() - 0.5) * 2.0 * st.longitudinal.width(st.alpha(), t);
            let sy = st.transverse_up.width(st.alpha(), t);
            let y = (rnd() - 0.5) * 2.0 * (10.0 + 2.0 * sy);
            let (gx, gy) = st.gradient(x, y, t);
            // Richardson-extrapolated centred differences; k0·h ≈ 0.02 is too
            // coarse for a plain centred difference at 1e-6
            let cd = |f: &dyn Fn(f64) -> Complex64, h: f64| (f(h) - f(-h)) / (2.0 * h);
            let fxs = |d: f64| st.amplitude(x + d, y, t);
            let fys = |d: f64| st.amplitude(x, y + d, t);
            let fx = (4.0 * cd(&fxs, h / 2.0) - cd(&fxs, h)) / 3.0;
            let fy = (4.0 * cd(&fys, h / 2.0) - cd(&fys, h)) / 3.0;
            // x-derivative scale is dominated by k0; compare relative to |∇ψ|
            assert!((gx - fx).norm() <= 1e-6 * gx.norm().max(1e-300) + 1e-12, "gx {gx} {fx}");
            assert!((gy - fy).norm() <= 1e-6 * gy.norm().max(st.amplitude(x, y, t).norm()), "gy {gy} {fy}");
        }
    }

    #[test]
    fn gradient_is_zero_on_symmetry_line() {
        let st = TwoSlitState::paper_default();
        for &t in &[0.0, 0.3, 2.0] {
            let (_, gy) = st.gradient(0.0, 0.0, t);
            assert!(gy.norm() < 1e-14 * st.amplitude(0.0, 0.0, t).norm().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn initial_transverse_current_vanishes() {
        let st = TwoSlitState::paper_default();
        for i in 0..50 {
            let y = -15.0 + 0.6 * i as f64;
            assert!(st.current_at(0.01, y, 0.0).jy.abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_density_is_twice_single_slit() {
        let st = TwoSlitState::paper_default();
        let a = st.alpha();
        let single = (st.transverse_up.amplitude(a, 0.0, 0.0) * FRAC_1_SQRT_2).norm_sqr();
        let both = st.transverse_density(0.0, 0.0);
        assert!((both - 4.0 * single).abs() <= 1e-12 * both.max(1e-300));
        // |χ1+χ2|²/2 = 2|χ1|²(1 + cos 0)/2
        let chi = st.transverse_up.amplitude(a, 0.0, 0.0).norm_sqr();
        assert!((both - 2.0 * chi).abs() <= 1e-12 * both.max(1e-300));
    }

    #[test]
    fn state_norm_at_t0() {
        let st = TwoSlitState::paper_default();
        let a = st.alpha();
        let nx = trapz(|x| st.longitudinal.density(a, x, 0.0), -1.0, 1.0, 4000);
        let ny = trapz(|y| st.transverse_density(y, 0.0), -20.0, 20.0, 8000);
        assert!((nx * ny - 1.0).abs() < 1e-6);
    }

    #[test]
    fn continuity_equation() {
        let st = TwoSlitState::paper_default();
        let a = st.alpha();
        let mut seed = 99u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let t = 0.1 + 3.0 * rnd();
            let x = st.longitudinal.center(t) + (rnd() - 0.5) * 2.0 * st.longitudinal.width(a, t);
            let y = (rnd() - 0.5) * 2.0 * (10.0 + st.transverse_up.width(a, t));
            let (ht, hx, hy) = (1e-6, 1e-4, 1e-3);
            let drho = (st.density(x, y, t + ht) - st.density(x, y, t - ht)) / (2.0 * ht);
            let djx = (st.current_at(x + hx, y, t).jx - st.current_at(x - hx, y, t).jx) / (2.0 * hx);
            let djy = (st.current_at(x, y + hy, t).jy - st.current_at(x, y - hy, t).jy) / (2.0 * hy);
            let scale = drho.abs().max(djx.abs()).max(djy.abs());
            assert!((drho + djx + djy).abs() <= 1e-5 * scale, "{drho} {djx} {djy}");
        }
    }

    #[test]
    fn current_factorizes() {
        let st = TwoSlitState::paper_default();
        let a = st.alpha();
        for &(x, y, t) in &[(3.0, 4.0, 0.001), (1500.0, -3.0, 0.5), (6000.0, 17.0, 2.0)] {
            let j = st.current_at(x, y, t);
            let jx = st.transverse_density(y, t) * st.longitudinal.current(a, x, t);
            let jy = st.longitudinal.density(a, x, t) * st.transverse_current(y, t);
            assert!((j.jx - jx).abs() <= 1e-12 * j.jx.abs().max(1e-300));
            assert!((j.jy - jy).abs() <= 1e-12 * j.jy.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn backflow_sign_changes_in_far_field() {
        let st = TwoSlitState::paper_default();
        let t = 3.0;
        let mut changes = 0;
        let mut prev = st.transverse_current(0.5, t);
        for i in 1..2000 {
            let y = 0.5 + i as f64 * 0.25;
            let j = st.transverse_current(y, t);
            if j * prev < 0.0 {
                changes += 1;
            }
            prev = j;
        }
        assert!(changes > 0);
    }

    #[test]
    fn ratio_velocity_matches_direct() {
        let st = TwoSlitState::paper_default();
        for &(y, t) in &[(0.3, 0.2), (12.0, 1.0), (-40.0, 3.0), (100.0, 6.0)] {
            let (v, ld) = st.transverse_velocity(y, t);
            let yv = st.transverse(y, t);
            let direct = st.alpha() * (st.transverse_gradient(y, t) / yv).im;
            assert!((v - direct).abs() <= 1e-9 * direct.abs().max(1.0));
            assert!((ld - yv.norm_sqr().ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn momentum_amplitude_is_fourier_transform() {
        let a = UnitSystem::helium().alpha;
        let p = GaussianPacket1D::new(1.5, 20.0, 0.5).unwrap().evolved(0.01);
        let t = 0.02;
        for &k in &[0.0, 1.0, 1.26, 2.5] {
            // (2π)^{-1/2} ∫ ψ(x) e^{-ikx} dx
            let c = p.center(t);
            let n = 20000;
            let (lo, hi) = (c - 15.0, c + 15.0);
            let h = (hi - lo) / n as f64;
            let mut s = Complex64::new(0.0, 0.0);
            for i in 0..=n {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                s += p.amplitude(a, x, t) * Complex64::from_polar(1.0, -k * x) * w;
            }
            s *= h / (2.0 * PI).sqrt();
            let m = p.momentum_amplitude(a, k, t);
            assert!((s - m).norm() < 1e-9, "k={k} {s} {m}");
        }
    }

    #[test]
    fn momentum_peak_and_two_slit_zeros() {
        let st = TwoSlitState::paper_default();
        let a = st.alpha();
        let k0 = 3000.0 / a;
        let at = st.longitudinal.momentum_amplitude(a, k0, 0.0).norm();
        let off = st.longitudinal.momentum_amplitude(a, k0 + 0.5, 0.0).norm();
        assert!(at > off);
        for n in 0..5 {
            let kz = (n as f64 + 0.5) * PI / 10.0;
            assert!(st.transverse_momentum(kz, 0.7).norm() < 1e-12);
        }
        // density is 2 cos²(ks) times the single-slit Gaussian
        let k = 0.37;
        let ratio = st.transverse_momentum(k, 0.0).norm_sqr() / st.transverse_up.momentum_density(a, k);
        assert!((ratio - 2.0 * (k * 10.0).cos().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_width() {
        assert!(GaussianPacket1D::new(0.0, 0.0, -1.0).is_err());
        let p = SlitParameters {
            sigma_x: -0.1,
            ..Default::default()
        };
        match TwoSlitState::from_parameters(&p, UnitSystem::helium()) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "sigma_x"),
            other => panic!("{other:?}"),
        }
    }
}
