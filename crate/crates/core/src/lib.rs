//! Simulation, linear calculus and LASSO estimation for Hawkes-autoregressive
//! (HAR) processes: multivariate point processes coupled with multiscale
//! autoregressive chains living on lattices `theta_p + Z / n_p`.

pub mod error;
pub mod estimate;
pub mod lattice;
pub mod lincore;
pub mod model;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
