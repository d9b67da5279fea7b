//! Solver for semilinear generalized Black-Scholes equations, written in
//! heat form `u_t - u_xx = G(u, u_x)` on the real line and solved as the
//! fixed point of the Duhamel map by Picard iteration on contraction-sized
//! time windows.

pub mod cli;
pub mod error;
pub mod field;
pub mod kernel;
pub mod nonlinearity;
pub mod oracle;
pub mod picard;
pub mod transform;

pub use error::{Error, Result};
