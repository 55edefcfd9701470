//! Binary restricted Boltzmann machines, magnitude pruning with
//! retraining, partition-function evaluation (exact and annealed
//! importance sampling), and sparse deep belief networks with a
//! feedforward fine-tuning path.
//!
//! The `sparsebm` binary exposes the experiment-runner CLI; this library
//! holds everything it orchestrates.

pub mod config;
pub mod data;
pub mod dbn;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod math;
pub mod pruning;
pub mod rbm;
pub mod runner;

pub use error::{Error, Result};
