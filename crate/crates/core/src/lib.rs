//! Finite-element solver and adjoint-based Robin control for the steady
//! thermistor problem with vanishing electrical conductivity.

pub mod assembly;
pub mod control;
pub mod error;
pub mod linalg;
pub mod materials;
pub mod mesh;
pub mod mesh_io;
pub mod quadrature;
pub mod state;
pub mod transform;
pub mod verify;

pub use error::{Error, Result};
