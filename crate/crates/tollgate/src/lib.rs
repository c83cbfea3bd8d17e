//! Integer token tolls for dynamic congestion games.
//!
//! Agents repeatedly pick routes (sets of resources) and pay or earn integer tolls from a
//! capped token wallet. This crate designs tolls that steer the population to a target
//! flow, and checks the outcome with a mean-field ODE and a finite-population simulator.

pub mod design;
pub mod error;
pub mod io;
pub mod meanfield;
pub mod metrics;
pub mod model;
pub mod network;
pub mod policy;
pub mod population;
pub mod reward;
pub mod scenario;
pub mod wallet;

pub use error::{Error, Result};
