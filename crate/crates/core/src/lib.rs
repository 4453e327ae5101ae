//! Simulation of products of i.i.d. random matrices: the Markov walk
//! y + log‖G_n g v‖, its exit times, and the spectral objects behind the
//! conditioned limit theorems.

pub mod chain;
pub mod error;
pub mod exits;
pub mod laws;
pub mod matgroup;
pub mod reference;
pub mod rng;
pub mod spectral;
pub mod stats;

pub use error::{LabError, Result};
