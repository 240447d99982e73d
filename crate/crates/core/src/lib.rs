//! Simulation and verification of trait-structured competitive exclusion
//! under pure selection on a single renewed resource.

pub mod asymptotics;
pub mod disintegration;
pub mod error;
pub mod integrator;
pub mod lp;
pub mod measures;
pub mod metric;
pub mod model;
pub mod scenarios;

pub use error::{Error, Result};
