//! Low-regularity integrators for semilinear parabolic equations on
//! rectangular grids, with maximum-bound and energy diagnostics.

pub mod diagnostics;
pub mod experiments;
pub mod expops;
pub mod output;
pub mod potential;
pub mod schemes;
pub mod spatial;

pub use expops::Propagator;
pub use potential::{Potential, PotentialSpec, StabilityBounds};
pub use schemes::{SchemeKind, Stepper};
pub use spatial::{Boundary, Field, GridSpec};
