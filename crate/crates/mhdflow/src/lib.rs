//! Finite-element simulation of two immiscible, electrically conducting
//! fluids moving through a steady magnetic field.
//!
//! The interface between the fluids is represented by a diffuse-interface
//! (phase-field) variable `phi` that relaxes toward +1 in one fluid and -1
//! in the other across a thin transition layer. The flow is incompressible
//! with variable density, viscosity, and conductivity; the electromagnetic
//! response is quasi-static (valid at low magnetic Reynolds number), so only
//! the electric potential `V` and current density `J = sigma (-grad V + u x B)`
//! are computed, never the induced magnetic field.
//!
//! Each time step performs four decoupled solves with a BDF-1/BDF-2
//! discretization in time and Q1 finite elements in space:
//!
//! 1. interface transport + chemical potential (coupled linear system),
//! 2. momentum with semi-implicit convection, surface tension, Lorentz
//!    force, and gravity,
//! 3. a pressure-stabilization update (Poisson solve for the increment),
//! 4. the electric potential solve and current recovery.
//!
//! Everything is dimensionless; see [`params`] for the groups involved.

pub mod cases;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod io;
pub mod linsolve;
pub mod mesh;
pub mod params;
pub mod sim;
pub mod stepper;

pub use error::{Error, Result};
