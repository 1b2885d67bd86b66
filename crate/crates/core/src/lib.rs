pub mod backaction;
pub mod bohm;
pub mod error;
pub mod grid;
pub mod intrinsic;
pub mod model;
pub mod observables;
pub mod quadrature;

pub use error::{Error, Result};
pub use grid::{JointDistribution, Orientation, ProposalTag, ScreenGeometry, Source, SpaceTimeGrid, TimeDistribution};
pub use model::{CurrentVector, GaussianPacket1D, TwoSlitState, UnitSystem};
