//! Gauss–Legendre rules and composite integration with panel doubling.

use num_complex::Complex64;
use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// n-point rule on [−1, 1] by Newton iteration on P_n.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / dp;
                if (z - z1).abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(c + h * x))
            .sum::<f64>()
            * h
    }
}

/// Shared 16-point rule.
pub fn gl16() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(16))
}

/// Composite rule with `panels` equal panels; returns (integral, ∫|f|).
pub fn composite_complex(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    panels: usize,
    f: &impl Fn(f64) -> Complex64,
) -> (Complex64, f64) {
    let h = (b - a) / panels as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut l1 = 0.0;
    for p in 0..panels {
        let lo = a + p as f64 * h;
        let c = lo + 0.5 * h;
        for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
            let v = f(c + 0.5 * h * x);
            sum += v * w;
            l1 += v.norm() * w;
        }
    }
    (sum * (0.5 * h), l1 * 0.5 * h)
}

/// Doubles the panel count until successive results differ by less than
/// `rel_tol` times the L1 norm of the integrand.
pub fn adaptive_complex(
    a: f64,
    b: f64,
    start_panels: usize,
    rel_tol: f64,
    max_panels: usize,
    f: impl Fn(f64) -> Complex64,
) -> Result<Complex64> {
    let rule = gl16();
    let mut panels = start_panels.max(1);
    let (mut prev, _) = composite_complex(rule, a, b, panels, &f);
    loop {
        panels *= 2;
        let (cur, l1) = composite_complex(rule, a, b, panels, &f);
        let change = (cur - prev).norm();
        if change <= rel_tol * l1 || l1 == 0.0 {
            return Ok(cur);
        }
        if panels >= max_panels {
            return Err(Error::QuadratureNotConverged { panels, change });
        }
        prev = cur;
    }
}

pub fn adaptive_real(
    a: f64,
    b: f64,
    start_panels: usize,
    rel_tol: f64,
    max_panels: usize,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    adaptive_complex(a, b, start_panels, rel_tol, max_panels, |x| {
        Complex64::new(f(x), 0.0)
    })
    .map(|c| c.re)
}

/// Trapezoid weights for a strictly increasing, possibly non-uniform axis.
pub fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let h = axis[i + 1] - axis[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

pub fn trapezoid(axis: &[f64], values: &[f64]) -> f64 {
    trapezoid_weights(axis)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}
