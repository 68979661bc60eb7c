//! Random interlacements on `Z^d`: lattice geometry, potential theory,
//! samplers, intersection graphs and numerical checks of the connectivity
//! estimates.

pub mod capacity;
pub mod checks;
pub mod error;
pub mod escape_field;
pub mod graph;
pub mod green;
pub mod lattice;
pub mod layers;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};
pub use lattice::{Ball, LatticePoint, SiteSet};
pub use rng::RngStream;
