//! Site-specific cellular network model used to evaluate antenna
//! configurations.
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`]: deployment geometry (sites, sector antennas, buildings,
//!   aerial corridors), synthetic generation and seeded user drops.
//! - [`antenna`]: the parametric sector pattern and its HPBW-dependent peak gain.
//! - [`propagation`]: omnidirectional large-scale gain providers (analytic model
//!   or an ingested gain map) and the composed per-link total gain.
//! - [`simulator`]: association, SINR, rates and the sum-log-rate objective.

pub mod antenna;
pub mod error;
pub mod geometry;
pub mod propagation;
pub mod scenario;
pub mod simulator;

pub use error::{Error, Result};
pub use geometry::Point3;
