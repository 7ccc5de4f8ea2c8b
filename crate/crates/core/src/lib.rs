//! Simulation and verification toolkit for nonadiabatic control of small
//! quantum systems in the ancillary picture.
//!
//! A protocol picks a time-dependent orthonormal frame `{|mu_k(t)>}`, derives
//! drives that keep chosen frame states transitionless (the von Neumann
//! condition), propagates the Schrödinger equation and checks the outcome.

pub mod checks;
pub mod error;
pub mod exec;
pub mod fourlevel;
pub mod frames;
pub mod integrator;
pub mod lambda3;
pub mod protocols;
pub mod qcore;
pub mod schedules;

pub use error::{Error, Result};
