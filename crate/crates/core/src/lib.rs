//! Unfitted mixed finite elements for the Poisson problem in two dimensions.

pub mod assembly;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod patches;
pub mod poly;
pub mod postprocess;
pub mod quadrature;
pub mod spaces;
pub mod systems;

pub use error::{Error, Result};
