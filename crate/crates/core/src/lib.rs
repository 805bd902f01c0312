//! Numerical laboratory for centralized mean-field control of particle
//! systems driven by neural ODE/SDE dynamics.

pub mod config;
pub mod error;
pub mod hamiltonian;
pub mod hjb;
pub mod io;
pub mod lab;
pub mod model;
pub mod runner;
pub mod simulator;
pub mod solver;
pub mod stats;
pub mod supervised;

pub use error::{Error, Result};
