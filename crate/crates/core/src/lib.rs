//! Cahn–Hilliard equations on evolving closed surfaces: piecewise-linear
//! evolving surface finite elements in space and linearly implicit BDF
//! methods of orders 1 to 5 in time.

pub mod assembly;
pub mod bdf;
pub mod chsystem;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linsolve;
pub mod mesh;
pub mod vtk;

pub use error::{Error, Result};
