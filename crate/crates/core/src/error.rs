use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("time window captures only {captured:.6} of the arrival mass (need >= 0.999)")]
    WindowTooSmall { captured: f64 },
    #[error("distribution has no support on the grid")]
    EmptySupport,
    #[error("zero mass for {what}")]
    ZeroMass { what: String },
    #[error("momentum window leaves {tail:e} of the mass outside")]
    QuadratureWindow { tail: f64 },
    #[error("quadrature did not converge after {panels} panels (last change {change:e})")]
    QuadratureNotConverged { panels: usize, change: f64 },
    #[error("grid does not resolve {missed} sign changes of the normal current")]
    UnresolvedSignChanges { missed: usize },
    #[error("under-sampled histogram: {mean_count:.2} counts per occupied bin (need >= 10)")]
    UnderSampled { mean_count: f64 },
    #[error("resolution too coarse: {reason}")]
    ResolutionTooCoarse { reason: String },
    #[error("norm increased by {increase:e} at step {step}")]
    NormIncrease { step: usize, increase: f64 },
    #[error("lower wall leakage {mass:e} exceeds 1e-8 at t = {t} ms")]
    WallLeakage { t: f64, mass: f64 },
    #[error("grid {nx}x{ny} exceeds the 2D oracle limit of 1024x1024")]
    GridTooLarge { nx: usize, ny: usize },
    #[error("captured mass {captured:.6} below 0.999; pass force to compare anyway")]
    InsufficientCapture { captured: f64 },
    #[error("grids differ: {0}")]
    GridMismatch(String),
    #[error("trajectory {seed_index} reached a node of the wavefunction at t = {t} ms")]
    NodeProximity { seed_index: u64, t: f64 },
    #[error("integrator step size underflow at t = {t} ms")]
    StepUnderflow { t: f64 },
    #[error("{0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::WindowTooSmall { .. } => "window_too_small",
            Error::EmptySupport => "empty_support",
            Error::ZeroMass { .. } => "zero_mass",
            Error::QuadratureWindow { .. } => "quadrature_window",
            Error::QuadratureNotConverged { .. } => "quadrature_not_converged",
            Error::UnresolvedSignChanges { .. } => "unresolved_sign_changes",
            Error::UnderSampled { .. } => "under_sampled",
            Error::ResolutionTooCoarse { .. } => "resolution_too_coarse",
            Error::NormIncrease { .. } => "norm_increase",
            Error::WallLeakage { .. } => "wall_leakage",
            Error::GridTooLarge { .. } => "grid_too_large",
            Error::InsufficientCapture { .. } => "insufficient_capture",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::NodeProximity { .. } => "node_proximity",
            Error::StepUnderflow { .. } => "step_underflow",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
