//! Tools for macroscopic locality: decide whether a bipartite behavior's
//! intensity fluctuations admit a classical joint model, optimize Bell
//! functionals over that set and over the local polytope, check the arcsin
//! correlator conditions, compose boxes by wiring, and simulate the
//! many-particle beam experiment.
//!
//! The narrative guide lives in `book/`; its code blocks are compiled and run
//! as doctests (see the `guide` module at the bottom of this file).

pub mod bell;
pub mod certificates;
pub mod conic;
pub mod correlators;
pub mod error;
pub mod macroscale;
pub mod rng;
pub mod scenario;
pub mod wiring;

pub use error::{Error, Result};
pub use scenario::{Behavior, MarginalTables, Party, Scenario, ValidationReport};
