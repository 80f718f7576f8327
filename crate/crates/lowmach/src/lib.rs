//! Staggered-grid finite-volume solver for isothermal low Mach number
//! fluctuating hydrodynamics of binary liquid mixtures in two dimensions.
//!
//! Scalars (densities, concentration, pressure) live at cell centers,
//! velocity components at cell faces (MAC layout), and off-diagonal
//! stresses at cell corners. Two temporal integrators are provided: a
//! semi-implicit trapezoidal scheme for inertial flows and an implicit
//! midpoint scheme for the overdamped (zero Reynolds number) limit, both
//! built around a coupled velocity-pressure Stokes solve.

pub mod advection;
pub mod analysis;
pub mod error;
pub mod grid;
pub mod harness;
pub mod integrators;
pub mod mixture;
pub mod ops;
pub mod stochastic;
pub mod stokes;

pub use error::Error;
pub use grid::{BcKind, BcSpec, CellField, FaceField, Grid, NodeField, WallVelocity};
pub use mixture::{FluidState, MixtureModel};
