//! Petrov-Galerkin solvers with optimal test functions, hierarchical
//! compression of the optimal test matrix and learned admissibility.

pub mod assembly;
pub mod bspline;
pub mod cli;
pub mod config;
pub mod error;
pub mod flops;
pub mod hmat;
pub mod krylov;
pub mod opttest;
pub mod pipeline;
pub mod problems;
pub mod surrogate;

pub use error::{Error, Result};
pub use flops::{FlopCounter, FlopSnapshot, Phase};
