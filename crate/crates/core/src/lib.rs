//! Random walks on the strip `Z x {1..d}` in a random environment: exit
//! kernels, transience, the branching structure of the walk before it first
//! hits layer 1, the mean hitting time, the invariant density of the
//! environment seen from the walker, and Monte Carlo cross-checks of all of
//! them.

pub mod branching;
pub mod config;
pub mod environment;
pub mod error;
pub mod exit_kernel;
pub mod invariant_measure;
pub mod linalg;
pub mod quenched;
pub mod series;
pub mod simulator;
pub mod suite;

pub use error::{Error, Result};
