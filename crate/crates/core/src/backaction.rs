//! Detector back-action: absorbing boundary rule (Crank–Nicolson with a
//! Robin row) and the path-integral absorbing boundary survival current.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{interpolate, JointDistribution, Orientation, ProposalTag, ScreenGeometry, Source, SpaceTimeGrid};
use crate::intrinsic::{cell_bounds, Factor};
use crate::model::TwoSlitState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// ∂ᵧχ = iκχ at the screen.
    Robin,
    /// ∂ᵧχ = 0 at the screen.
    Reflecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbrConfig {
    pub kappa: f64,
    pub y_min: f64,
    pub ny: usize,
    pub dt: f64,
    pub t_max: f64,
    pub boundary: Boundary,
}

impl AbrConfig {
    /// Defaults for a state: wall 6.5 spread widths below the lower slit,
    /// dy ≈ 0.05 μm, dt = 2.5e-4 ms.
    pub fn for_state(st: &TwoSlitState, l_y: f64, kappa: f64, t_max: f64) -> Self {
        let y_min = default_y_min(st, t_max);
        let ny = ((l_y - y_min) / 0.05).ceil() as usize + 1;
        AbrConfig {
            kappa,
            y_min,
            ny: ny.max(512),
            dt: 2.5e-4,
            t_max,
            boundary: Boundary::Robin,
        }
    }

    pub fn dy(&self, l_y: f64) -> f64 {
        (l_y - self.y_min) / (self.ny - 1) as f64
    }

    fn validate(&self, st: &TwoSlitState, l_y: f64) -> Result<()> {
        if !(self.kappa > 0.0) && self.boundary == Boundary::Robin {
            return Err(Error::invalid("kappa", "must be positive"));
        }
        if self.ny < 512 {
            return Err(Error::invalid("ny", "must be >= 512"));
        }
        if !(self.dt > 0.0) || !(self.t_max > 0.0) {
            return Err(Error::invalid("dt", "dt and t_max must be positive"));
        }
        if !(self.y_min < l_y) {
            return Err(Error::invalid("y_min", "must lie below the screen"));
        }
        let dy = self.dy(l_y);
        let p = &st.transverse_up;
        let alpha = st.alpha();
        // wavenumber band holding the state, plus the boundary layer
        let k_band = p.k0(alpha).abs() + 10.0 * p.sigma_k();
        let k_band = k_band.max(self.kappa);
        if k_band * dy > 1.0 {
            return Err(Error::ResolutionTooCoarse {
                reason: format!("dy = {dy} μm does not resolve k = {k_band} μm⁻¹"),
            });
        }
        if 0.5 * alpha * k_band * k_band * self.dt > 1.0 {
            return Err(Error::ResolutionTooCoarse {
                reason: format!("dt = {} ms too large for k = {k_band} μm⁻¹", self.dt),
            });
        }
        Ok(())
    }
}

pub fn default_y_min(st: &TwoSlitState, t_max: f64) -> f64 {
    let a = st.alpha();
    let lower = st.transverse_down.center(0.0).min(st.transverse_down.center(t_max));
    lower - 6.5 * st.transverse_down.width(a, t_max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrSolution {
    pub l_y: f64,
    pub times: Vec<f64>,
    pub boundary_trace: Vec<Complex64>,
    pub interior_norm: Vec<f64>,
    pub config: AbrConfig,
    pub max_wall_mass: f64,
}

impl AbrSolution {
    pub fn absorbed(&self) -> f64 {
        1.0 - self.interior_norm[self.interior_norm.len() - 1]
    }

    /// Absorption rate ακ|χ(L, t)|² at the stored times.
    pub fn flux(&self, alpha: f64) -> Vec<f64> {
        self.boundary_trace
            .iter()
            .map(|c| alpha * self.config.kappa * c.norm_sqr())
            .collect()
    }

    /// CSV of (t, Re χ, Im χ, |χ|², cumulative_absorbed).
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t_ms,re_chi_um^-1/2,im_chi_um^-1/2,abs2_chi_um^-1,cumulative_absorbed")?;
        for ((t, c), n) in self.times.iter().zip(&self.boundary_trace).zip(&self.interior_norm) {
            writeln!(w, "{t:.9e},{:.12e},{:.12e},{:.12e},{:.12e}", c.re, c.im, c.norm_sqr(), 1.0 - n)?;
        }
        Ok(())
    }
}

/// Constant tridiagonal system factored once for repeated Thomas solves.
struct Tridiagonal {
    lower: Vec<Complex64>,
    upper_prime: Vec<Complex64>,
    inv_pivot: Vec<Complex64>,
}

impl Tridiagonal {
    fn factor(lower: Vec<Complex64>, diag: Vec<Complex64>, upper: Vec<Complex64>) -> Self {
        let n = diag.len();
        let mut upper_prime = vec![Complex64::new(0.0, 0.0); n];
        let mut inv_pivot = vec![Complex64::new(0.0, 0.0); n];
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let piv = diag[i] - lower[i] * prev;
            inv_pivot[i] = piv.inv();
            upper_prime[i] = upper[i] * inv_pivot[i];
            prev = upper_prime[i];
        }
        Tridiagonal {
            lower,
            upper_prime,
            inv_pivot,
        }
    }

    /// Solves in place.
    fn solve(&self, d: &mut [Complex64]) {
        let n = d.len();
        let mut prev = Complex64::new(0.0, 0.0);
        for i in 0..n {
            prev = (d[i] - self.lower[i] * prev) * self.inv_pivot[i];
            d[i] = prev;
        }
        for i in (0..n - 1).rev() {
            let next = d[i + 1];
            d[i] -= self.upper_prime[i] * next;
        }
    }
}

/// 1D Crank–Nicolson propagator on nodes 1..=N of [y_min, L]; node 0 is a
/// reflecting (Dirichlet) wall and node N carries the screen condition.
struct Cn1d {
    n: usize,
    a: f64,
    beta: f64,
    kdy: f64,
    lhs: Tridiagonal,
}

impl Cn1d {
    fn new(n: usize, alpha: f64, dy: f64, dt: f64, kappa: f64) -> Self {
        let a = alpha / (2.0 * dy * dy);
        let beta = 0.5 * dt;
        let kdy = kappa * dy;
        let ib = Complex64::new(0.0, beta);
        // H: interior −a(χ₊ − 2χ + χ₋); last row −a(2χ₋ − 2χ + 2iκdy χ)
        let mut lower = vec![-ib * a; n];
        let upper = vec![-ib * a; n];
        let mut diag = vec![Complex64::new(1.0, 0.0) + ib * (2.0 * a); n];
        lower[0] = Complex64::new(0.0, 0.0);
        lower[n - 1] = -ib * (2.0 * a);
        diag[n - 1] = Complex64::new(1.0, 0.0) + ib * (2.0 * a - Complex64::new(0.0, 2.0 * a * kdy));
        Cn1d {
            n,
            a,
            beta,
            kdy,
            lhs: Tridiagonal::factor(lower, diag, upper),
        }
    }

    /// (I − iβH)χ into `out`.
    fn apply_rhs(&self, chi: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        let ib = Complex64::new(0.0, self.beta * self.a);
        for j in 0..n - 1 {
            let left = if j == 0 { Complex64::new(0.0, 0.0) } else { chi[j - 1] };
            out[j] = chi[j] + ib * (chi[j + 1] - 2.0 * chi[j] + left);
        }
        let j = n - 1;
        out[j] = chi[j] + ib * (2.0 * chi[j - 1] - 2.0 * chi[j] + Complex64::new(0.0, 2.0 * self.kdy) * chi[j]);
    }

    /// One step with the right-hand side formed inside the forward sweep;
    /// returns the weighted norm of the new state.
    fn step_fused(&self, chi: &mut [Complex64], scratch: &mut [Complex64], dy: f64) -> f64 {
        let n = self.n;
        let ib = Complex64::new(0.0, self.beta * self.a);
        let t = &self.lhs;
        let mut prev = Complex64::new(0.0, 0.0);
        let mut left = Complex64::new(0.0, 0.0);
        for j in 0..n - 1 {
            let c = chi[j];
            let d = c + ib * (chi[j + 1] - 2.0 * c + left);
            left = c;
            prev = (d - t.lower[j] * prev) * t.inv_pivot[j];
            scratch[j] = prev;
        }
        let j = n - 1;
        let d = chi[j] + ib * (2.0 * chi[j - 1] - 2.0 * chi[j] + Complex64::new(0.0, 2.0 * self.kdy) * chi[j]);
        let mut next = (d - t.lower[j] * prev) * t.inv_pivot[j];
        chi[j] = next;
        let mut sum = 0.5 * next.norm_sqr();
        for j in (0..n - 1).rev() {
            next = scratch[j] - t.upper_prime[j] * next;
            chi[j] = next;
            sum += next.norm_sqr();
        }
        dy * sum
    }
}

/// Discrete norm with half weight on the screen node.
fn weighted_norm(chi: &[Complex64], dy: f64) -> f64 {
    let n = chi.len();
    dy * (chi[..n - 1].iter().map(|c| c.norm_sqr()).sum::<f64>() + 0.5 * chi[n - 1].norm_sqr())
}

pub fn solve_abr_transverse(st: &TwoSlitState, l_y: f64, cfg: &AbrConfig) -> Result<AbrSolution> {
    cfg.validate(st, l_y)?;
    let alpha = st.alpha();
    let dy = cfg.dy(l_y);
    let n = cfg.ny - 1;
    let kappa = match cfg.boundary {
        Boundary::Robin => cfg.kappa,
        Boundary::Reflecting => 0.0,
    };
    let cn = Cn1d::new(n, alpha, dy, cfg.dt, kappa);
    let mut chi: Vec<Complex64> = (1..=n).map(|j| st.transverse(cfg.y_min + j as f64 * dy, 0.0)).collect();
    let n0 = weighted_norm(&chi, dy);
    let scale = 1.0 / n0.sqrt();
    chi.iter_mut().for_each(|c| *c *= scale);

    let steps = (cfg.t_max / cfg.dt).round() as usize;
    let buffer = ((0.02 * n as f64) as usize).max(8);
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let mut times = Vec::with_capacity(steps + 1);
    let mut trace = Vec::with_capacity(steps + 1);
    let mut norms = Vec::with_capacity(steps + 1);
    let mut norm = weighted_norm(&chi, dy);
    times.push(0.0);
    trace.push(chi[n - 1]);
    norms.push(norm);
    let mut max_wall: f64 = 0.0;
    for s in 1..=steps {
        let next = cn.step_fused(&mut chi, &mut scratch, dy);
        if next > norm + 1e-10 {
            return Err(Error::NormIncrease {
                step: s,
                increase: next - norm,
            });
        }
        norm = next;
        let t = s as f64 * cfg.dt;
        if s % 50 == 0 || s == steps {
            let wall = dy * chi[..buffer].iter().map(|c| c.norm_sqr()).sum::<f64>();
            max_wall = max_wall.max(wall);
            if wall > 1e-8 {
                return Err(Error::WallLeakage { t, mass: wall });
            }
        }
        times.push(t);
        trace.push(chi[n - 1]);
        norms.push(norm);
    }
    Ok(AbrSolution {
        l_y,
        times,
        boundary_trace: trace,
        interior_norm: norms,
        config: *cfg,
        max_wall_mass: max_wall,
    })
}

fn require_horizontal(screen: &ScreenGeometry) -> Result<()> {
    if screen.orientation != Orientation::Horizontal || screen.normal_sign < 0.0 {
        return Err(Error::invalid("screen", "back-action is modelled on a horizontal screen facing +y"));
    }
    Ok(())
}

fn product_joint(st: &TwoSlitState, grid: &SpaceTimeGrid, rate: &[f64], tag: ProposalTag) -> Result<JointDistribution> {
    use rayon::prelude::*;
    let envelope = Factor::Single(&st.longitudinal, st.alpha());
    let density: Vec<f64> = cell_bounds(&grid.screen_coords)
        .par_iter()
        .flat_map_iter(|&cell| {
            grid.times
                .iter()
                .zip(rate)
                .map(move |(&t, &r)| if r == 0.0 { 0.0 } else { envelope.cell_density(cell, t) * r })
        })
        .collect();
    JointDistribution::from_unnormalized(grid.clone(), density, tag, Source::Analytic)
}

/// ABR joint density |ψₓ(x, t)|²·|χ(L, t)|².
pub fn abr_joint(st: &TwoSlitState, screen: &ScreenGeometry, sol: &AbrSolution, grid: &SpaceTimeGrid) -> Result<JointDistribution> {
    require_horizontal(screen)?;
    if (screen.offset - sol.l_y).abs() > 1e-9 {
        return Err(Error::invalid("screen", "offset differs from the solved L_y"));
    }
    let abs2: Vec<f64> = sol.boundary_trace.iter().map(|c| c.norm_sqr()).collect();
    let rate: Vec<f64> = grid.times.iter().map(|&t| interpolate(&sol.times, &abs2, t)).collect();
    if sol.absorbed() <= 0.0 || rate.iter().all(|&r| r == 0.0) {
        return Err(Error::ZeroMass { what: "ABR absorption".into() });
    }
    let jd = product_joint(st, grid, &rate, ProposalTag::Abr)?;
    let inside = jd.raw_mass * st.alpha() * sol.config.kappa;
    let captured = (inside / sol.absorbed()).min(1.0);
    Ok(jd.with_capture(captured, "absorbed by t_max"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PabWavefunction {
    /// Image solution vanishing on the screen: ∂ᵧψ doubles.
    Dirichlet,
    /// Free, unbounded state.
    Free,
    /// Gradient from an ABR solve, ∂ᵧχ = iκχ.
    Absorbing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PabConfig {
    pub lambda: f64,
    pub wavefunction: PabWavefunction,
    /// Step of the survival-integral axis in ms.
    pub dt: f64,
}

impl PabConfig {
    pub fn new(lambda: f64) -> Self {
        PabConfig {
            lambda,
            wavefunction: PabWavefunction::Dirichlet,
            dt: 2.5e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PabResult {
    pub joint: JointDistribution,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub absorbed: f64,
}

pub fn pab_joint(
    st: &TwoSlitState,
    screen: &ScreenGeometry,
    cfg: &PabConfig,
    grid: &SpaceTimeGrid,
    abr: Option<&AbrSolution>,
) -> Result<PabResult> {
    require_horizontal(screen)?;
    if !(cfg.lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    if !(cfg.dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let l = screen.offset;
    let c = cfg.lambda * st.alpha() / std::f64::consts::PI;
    let grad2: Box<dyn Fn(f64) -> f64> = match cfg.wavefunction {
        PabWavefunction::Free => Box::new(|t| st.transverse_gradient(l, t).norm_sqr()),
        PabWavefunction::Dirichlet => Box::new(|t| 4.0 * st.transverse_gradient(l, t).norm_sqr()),
        PabWavefunction::Absorbing => {
            let sol = abr.ok_or_else(|| Error::invalid("wavefunction", "absorbing gradient needs an ABR solution"))?;
            let k2 = sol.config.kappa * sol.config.kappa;
            let abs2: Vec<f64> = sol.boundary_trace.iter().map(|c| k2 * c.norm_sqr()).collect();
            let times = sol.times.clone();
            Box::new(move |t| interpolate(&times, &abs2, t))
        }
    };
    let t_end = grid.times[grid.n_times() - 1];
    let m = (t_end / cfg.dt).ceil().max(1.0) as usize;
    let h = t_end / m as f64;
    let fine: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    let rate: Vec<f64> = fine.iter().map(|&t| c * grad2(t)).collect();
    let mut integral = vec![0.0; m + 1];
    for i in 1..=m {
        // Simpson on each interval with the midpoint rate
        let mid = c * grad2(fine[i - 1] + 0.5 * h);
        integral[i] = integral[i - 1] + h / 6.0 * (rate[i - 1] + 4.0 * mid + rate[i]);
    }
    let survival: Vec<f64> = integral.iter().map(|v| (-v).exp()).collect();
    let grid_rate: Vec<f64> = grid
        .times
        .iter()
        .map(|&t| c * grad2(t) * interpolate(&fine, &survival, t))
        .collect();
    let joint = product_joint(st, grid, &grid_rate, ProposalTag::Pab)?;
    let absorbed = 1.0 - survival[m];
    let inside = joint.raw_mass;
    let joint = joint.with_capture((inside / absorbed).min(1.0), "absorbed by window end");
    Ok(PabResult {
        joint,
        times: fine,
        survival,
        absorbed,
    })
}

// ---------------------------------------------------------------------------
// 2D oracle

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Oracle2dConfig {
    pub x_range: [f64; 2],
    pub nx: usize,
    pub y_min: f64,
    pub ny: usize,
    pub dt: f64,
    pub t_max: f64,
    pub kappa: f64,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oracle2dSolution {
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    /// ψ(x, L, t) per stored time, over `xs`.
    pub boundary_trace: Vec<Vec<Complex64>>,
    pub norm: Vec<f64>,
}

/// Peaceman–Rachford ADI on a rectangle with reflecting walls and the screen
/// row at y = L. Interior nodes only are stored.
pub fn solve_2d_oracle(st: &TwoSlitState, l_y: f64, cfg: &Oracle2dConfig) -> Result<Oracle2dSolution> {
    if cfg.nx > 1024 || cfg.ny > 1024 {
        return Err(Error::GridTooLarge { nx: cfg.nx, ny: cfg.ny });
    }
    if cfg.nx < 8 || cfg.ny < 8 {
        return Err(Error::invalid("nx/ny", "need at least 8 points"));
    }
    let alpha = st.alpha();
    let dx = (cfg.x_range[1] - cfg.x_range[0]) / (cfg.nx - 1) as f64;
    let dy = (l_y - cfg.y_min) / (cfg.ny - 1) as f64;
    let mx = cfg.nx - 2; // x interior
    let my = cfg.ny - 1; // y nodes 1..=N
    let kappa = match cfg.boundary {
        Boundary::Robin => cfg.kappa,
        Boundary::Reflecting => 0.0,
    };
    let cy = Cn1d::new(my, alpha, dy, cfg.dt, kappa);
    // x operator with walls at both ends
    let ax = alpha / (2.0 * dx * dx);
    let ib = Complex64::new(0.0, 0.5 * cfg.dt);
    let lx = Tridiagonal::factor(
        (0..mx).map(|i| if i == 0 { Complex64::new(0.0, 0.0) } else { -ib * ax }).collect(),
        vec![Complex64::new(1.0, 0.0) + ib * (2.0 * ax); mx],
        vec![-ib * ax; mx],
    );
    let xs: Vec<f64> = (1..=mx).map(|i| cfg.x_range[0] + i as f64 * dx).collect();
    let ys: Vec<f64> = (1..=my).map(|j| cfg.y_min + j as f64 * dy).collect();
    // u[i][j], i over x, j over y
    let mut u: Vec<Vec<Complex64>> = xs
        .iter()
        .map(|&x| {
            let px = st.longitudinal.amplitude(alpha, x, 0.0);
            ys.iter().map(|&y| px * st.transverse(y, 0.0)).collect()
        })
        .collect();
    let norm_of = |u: &Vec<Vec<Complex64>>| dx * u.iter().map(|col| weighted_norm(col, dy)).sum::<f64>();
    let n0 = norm_of(&u);
    let s = 1.0 / n0.sqrt();
    u.iter_mut().flatten().for_each(|c| *c *= s);

    let steps = (cfg.t_max / cfg.dt).round() as usize;
    let mut times = vec![0.0];
    let mut trace = vec![u.iter().map(|col| col[my - 1]).collect::<Vec<_>>()];
    let mut norm = vec![norm_of(&u)];
    let mut col_buf = vec![Complex64::new(0.0, 0.0); my];
    let mut row = vec![Complex64::new(0.0, 0.0); mx];
    let iba = Complex64::new(0.0, 0.5 * cfg.dt * ax);
    for step in 1..=steps {
        // (I + iβHx) u* = (I − iβHy) uⁿ
        for col in u.iter_mut() {
            cy.apply_rhs(col, &mut col_buf);
            col.copy_from_slice(&col_buf);
        }
        for j in 0..my {
            for i in 0..mx {
                row[i] = u[i][j];
            }
            lx.solve(&mut row);
            for i in 0..mx {
                u[i][j] = row[i];
            }
        }
        // (I + iβHy) uⁿ⁺¹ = (I − iβHx) u*
        for j in 0..my {
            for i in 0..mx {
                let l = if i == 0 { Complex64::new(0.0, 0.0) } else { u[i - 1][j] };
                let r = if i + 1 == mx { Complex64::new(0.0, 0.0) } else { u[i + 1][j] };
                row[i] = u[i][j] + iba * (l - 2.0 * u[i][j] + r);
            }
            for i in 0..mx {
                u[i][j] = row[i];
            }
        }
        for col in u.iter_mut() {
            cy.lhs.solve(col);
        }
        times.push(step as f64 * cfg.dt);
        trace.push(u.iter().map(|col| col[my - 1]).collect());
        norm.push(norm_of(&u));
    }
    Ok(Oracle2dSolution {
        xs,
        times,
        boundary_trace: trace,
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianPacket1D, UnitSystem};

    fn small_state() -> TwoSlitState {
        let p = GaussianPacket1D::new(10.0, 0.0, 0.5).unwrap();
        TwoSlitState::new(GaussianPacket1D::new(0.0, 5.0, 1.0).unwrap(), p, p, UnitSystem::helium()).unwrap()
    }

    fn small_cfg(kappa: f64, boundary: Boundary) -> AbrConfig {
        AbrConfig {
            kappa,
            y_min: -60.0,
            ny: 2001,
            dt: 1e-4,
            t_max: 0.3,
            boundary,
        }
    }

    #[test]
    fn thomas_solves_tridiagonal() {
        let c = |r, i| Complex64::new(r, i);
        let lower = vec![c(0.0, 0.0), c(1.0, 0.5), c(-0.3, 0.1)];
        let diag = vec![c(4.0, 1.0), c(3.0, -1.0), c(5.0, 0.2)];
        let upper = vec![c(0.5, 0.5), c(1.0, 0.0), c(0.0, 0.0)];
        let x = vec![c(1.0, 2.0), c(-1.0, 0.5), c(0.3, -0.7)];
        let mut d: Vec<Complex64> = (0..3)
            .map(|i| {
                let mut v = diag[i] * x[i];
                if i > 0 {
                    v += lower[i] * x[i - 1];
                }
                if i < 2 {
                    v += upper[i] * x[i + 1];
                }
                v
            })
            .collect();
        Tridiagonal::factor(lower, diag, upper).solve(&mut d);
        for (a, b) in d.iter().zip(&x) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn reflecting_row_conserves_norm() {
        let st = small_state();
        let sol = solve_abr_transverse(&st, 15.0, &small_cfg(1.0, Boundary::Reflecting)).unwrap();
        for n in &sol.interior_norm {
            assert!((n - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn robin_norm_decays_with_exact_balance() {
        let st = small_state();
        let cfg = small_cfg(1.0, Boundary::Robin);
        let sol = solve_abr_transverse(&st, 15.0, &cfg).unwrap();
        let a = st.alpha();
        for k in 1..sol.times.len() {
            let dn = sol.interior_norm[k - 1] - sol.interior_norm[k];
            assert!(dn >= -1e-12);
            let mid = 0.5 * (sol.boundary_trace[k] + sol.boundary_trace[k - 1]);
            let flux = cfg.dt * a * cfg.kappa * mid.norm_sqr();
            assert!((dn - flux).abs() <= 1e-6 * flux + 1e-13, "step {k}: {dn} vs {flux}");
        }
        assert!(sol.absorbed() > 0.01);
    }

    #[test]
    fn resolution_guard() {
        let st = small_state();
        let mut cfg = small_cfg(1.0, Boundary::Robin);
        cfg.dt = 0.1;
        assert!(matches!(solve_abr_transverse(&st, 15.0, &cfg), Err(Error::ResolutionTooCoarse { .. })));
        cfg.ny = 100;
        assert!(solve_abr_transverse(&st, 15.0, &cfg).is_err());
    }

    #[test]
    fn wall_leakage_is_caught() {
        let st = small_state();
        let mut cfg = small_cfg(1.0, Boundary::Robin);
        cfg.y_min = 6.0;
        cfg.ny = 600;
        assert!(matches!(solve_abr_transverse(&st, 15.0, &cfg), Err(Error::WallLeakage { .. })));
    }

    #[test]
    fn oracle_guard_and_reflecting_norm() {
        let st = small_state();
        let mut cfg = Oracle2dConfig {
            x_range: [-8.0, 12.0],
            nx: 2000,
            y_min: -10.0,
            ny: 400,
            dt: 1e-3,
            t_max: 0.05,
            kappa: 1.0,
            boundary: Boundary::Reflecting,
        };
        assert!(matches!(solve_2d_oracle(&st, 15.0, &cfg), Err(Error::GridTooLarge { .. })));
        cfg.nx = 200;
        let sol = solve_2d_oracle(&st, 15.0, &cfg).unwrap();
        for n in &sol.norm {
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pab_survival_is_monotone() {
        let st = TwoSlitState::paper_default();
        let screen = ScreenGeometry::horizontal(15.0, [0.0, 30000.0]).unwrap();
        let grid = SpaceTimeGrid::uniform([0.0, 30000.0], 101, [0.0, 12.0], 601).unwrap();
        let r = pab_joint(&st, &screen, &PabConfig::new(1.0), &grid, None).unwrap();
        assert_eq!(r.survival[0], 1.0);
        assert!(r.survival.windows(2).all(|w| w[1] <= w[0]));
        let free = pab_joint(&st, &screen, &PabConfig { wavefunction: PabWavefunction::Free, ..PabConfig::new(1.0) }, &grid, None).unwrap();
        assert!(free.absorbed < r.absorbed);
    }
}
