//! Screens, space–time grids and normalized distributions.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::quadrature::trapezoid_weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Line x = L, screen coordinate y.
    Vertical,
    /// Line y = L, screen coordinate x.
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenGeometry {
    pub orientation: Orientation,
    pub offset: f64,
    pub span: [f64; 2],
    pub normal_sign: f64,
}

impl ScreenGeometry {
    pub fn new(orientation: Orientation, offset: f64, span: [f64; 2], normal_sign: f64) -> Result<Self> {
        if !(span[1] > span[0]) || !span[0].is_finite() || !span[1].is_finite() {
            return Err(Error::invalid("span", "needs positive length"));
        }
        if normal_sign != 1.0 && normal_sign != -1.0 {
            return Err(Error::invalid("normal_sign", "must be +1 or -1"));
        }
        if !offset.is_finite() {
            return Err(Error::invalid("offset", "must be finite"));
        }
        Ok(ScreenGeometry {
            orientation,
            offset,
            span,
            normal_sign,
        })
    }

    pub fn vertical(l_x: f64, span: [f64; 2]) -> Result<Self> {
        Self::new(Orientation::Vertical, l_x, span, 1.0)
    }

    pub fn horizontal(l_y: f64, span: [f64; 2]) -> Result<Self> {
        Self::new(Orientation::Horizontal, l_y, span, 1.0)
    }

    pub fn normal(&self) -> [f64; 2] {
        match self.orientation {
            Orientation::Vertical => [self.normal_sign, 0.0],
            Orientation::Horizontal => [0.0, self.normal_sign],
        }
    }

    /// Signed distance of (x, y) past the line along n.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let c = match self.orientation {
            Orientation::Vertical => x,
            Orientation::Horizontal => y,
        };
        (c - self.offset) * self.normal_sign
    }

    pub fn screen_coordinate(&self, x: f64, y: f64) -> f64 {
        match self.orientation {
            Orientation::Vertical => y,
            Orientation::Horizontal => x,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.orientation {
            Orientation::Vertical => "y",
            Orientation::Horizontal => "x",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    pub screen_coords: Vec<f64>,
    pub times: Vec<f64>,
}

impl SpaceTimeGrid {
    pub fn new(screen_coords: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        let increasing = |v: &[f64]| v.len() >= 2 && v.windows(2).all(|w| w[1] > w[0]) && v.iter().all(|x| x.is_finite());
        if !increasing(&screen_coords) {
            return Err(Error::invalid("screen_coords", "need >= 2 strictly increasing values"));
        }
        if !increasing(&times) {
            return Err(Error::invalid("times", "need >= 2 strictly increasing values"));
        }
        if times[0] < 0.0 {
            return Err(Error::invalid("times", "must start at t >= 0"));
        }
        Ok(SpaceTimeGrid { screen_coords, times })
    }

    pub fn uniform(span: [f64; 2], n_coords: usize, window: [f64; 2], n_times: usize) -> Result<Self> {
        Self::new(linspace(span[0], span[1], n_coords), linspace(window[0], window[1], n_times))
    }

    pub fn n_coords(&self) -> usize {
        self.screen_coords.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { b } else { a + i as f64 * h }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProposalTag {
    #[serde(rename = "SC")]
    Sc,
    #[serde(rename = "STD")]
    Std,
    #[serde(rename = "QF")]
    Qf,
    #[serde(rename = "QF+")]
    QfPlus,
    #[serde(rename = "QF-")]
    QfMinus,
    #[serde(rename = "BTC")]
    Btc,
    #[serde(rename = "ABR")]
    Abr,
    #[serde(rename = "PAB")]
    Pab,
}

impl ProposalTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProposalTag::Sc => "SC",
            ProposalTag::Std => "STD",
            ProposalTag::Qf => "QF",
            ProposalTag::QfPlus => "QF+",
            ProposalTag::QfMinus => "QF-",
            ProposalTag::Btc => "BTC",
            ProposalTag::Abr => "ABR",
            ProposalTag::Pab => "PAB",
        }
    }
}

impl fmt::Display for ProposalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Analytic,
    MonteCarlo,
}

/// Fraction of a proposal's mass that falls inside the grid window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub fraction: f64,
    pub method: String,
}

/// Normalized density on a (screen coordinate × time) grid, stored row-major
/// with one row per screen coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    pub grid: SpaceTimeGrid,
    pub density: Vec<f64>,
    pub tag: ProposalTag,
    pub source: Source,
    /// Trapezoid integral of the density before normalization.
    pub raw_mass: f64,
    pub capture: Option<Capture>,
}

impl JointDistribution {
    pub fn from_unnormalized(grid: SpaceTimeGrid, mut density: Vec<f64>, tag: ProposalTag, source: Source) -> Result<Self> {
        assert_eq!(density.len(), grid.n_coords() * grid.n_times());
        if let Some(bad) = density.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("density", format!("non-finite or negative value {bad}")));
        }
        let raw_mass = grid_integral(&grid, &density);
        if !(raw_mass > 0.0) {
            return Err(Error::ZeroMass { what: tag.to_string() });
        }
        let inv = 1.0 / raw_mass;
        density.iter_mut().for_each(|v| *v *= inv);
        Ok(JointDistribution {
            grid,
            density,
            tag,
            source,
            raw_mass,
            capture: None,
        })
    }

    pub fn with_capture(mut self, fraction: f64, method: &str) -> Self {
        self.capture = Some(Capture {
            fraction,
            method: method.to_string(),
        });
        self
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.density[i * self.grid.n_times() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let nt = self.grid.n_times();
        &self.density[i * nt..(i + 1) * nt]
    }

    pub fn total(&self) -> f64 {
        grid_integral(&self.grid, &self.density)
    }

    /// Screen-integrated time density.
    pub fn time_marginal(&self) -> TimeDistribution {
        let ws = trapezoid_weights(&self.grid.screen_coords);
        let nt = self.grid.n_times();
        let mut m = vec![0.0; nt];
        for (i, w) in ws.iter().enumerate() {
            for (acc, v) in m.iter_mut().zip(self.row(i)) {
                *acc += w * v;
            }
        }
        TimeDistribution {
            times: self.grid.times.clone(),
            density: m,
        }
    }

    /// Time-integrated density along the screen.
    pub fn position_marginal(&self) -> Vec<f64> {
        let wt = trapezoid_weights(&self.grid.times);
        (0..self.grid.n_coords())
            .map(|i| self.row(i).iter().zip(&wt).map(|(v, w)| v * w).sum())
            .collect()
    }

    pub fn same_grid(&self, other: &JointDistribution) -> bool {
        self.grid == other.grid
    }
}

pub(crate) fn grid_integral(grid: &SpaceTimeGrid, density: &[f64]) -> f64 {
    let ws = trapezoid_weights(&grid.screen_coords);
    let wt = trapezoid_weights(&grid.times);
    let nt = wt.len();
    ws.iter()
        .enumerate()
        .map(|(i, a)| a * density[i * nt..(i + 1) * nt].iter().zip(&wt).map(|(v, b)| v * b).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDistribution {
    pub times: Vec<f64>,
    pub density: Vec<f64>,
}

impl TimeDistribution {
    pub fn normalized(times: Vec<f64>, mut density: Vec<f64>) -> Result<Self> {
        let m = crate::quadrature::trapezoid(&times, &density);
        if !(m > 0.0) {
            return Err(Error::ZeroMass {
                what: "time distribution".into(),
            });
        }
        density.iter_mut().for_each(|v| *v /= m);
        Ok(TimeDistribution { times, density })
    }

    pub fn total(&self) -> f64 {
        crate::quadrature::trapezoid(&self.times, &self.density)
    }

    /// Linear interpolation, zero outside the axis.
    pub fn value_at(&self, t: f64) -> f64 {
        interpolate(&self.times, &self.density, t)
    }
}

/// Linear interpolation on an increasing axis, zero outside it.
pub fn interpolate(axis: &[f64], values: &[f64], t: f64) -> f64 {
    if t < axis[0] || t > axis[axis.len() - 1] {
        return 0.0;
    }
    let j = axis.partition_point(|&a| a <= t).clamp(1, axis.len() - 1);
    let (a0, a1) = (axis[j - 1], axis[j]);
    let w = (t - a0) / (a1 - a0);
    values[j - 1] * (1.0 - w) + values[j] * w
}
