//! Simulation and verification toolkit for compound mixed Poisson processes
//! under progressively equivalent changes of measure.

pub mod dist;
pub mod expr;
pub mod model;
pub mod premium;
pub mod quad;
pub mod report;
pub mod rng;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod stats;
pub mod verify;
