//! Simulation, discrete approximation and optimality certificates for
//! optimal control of integro-differential sweeping processes with
//! controlled moving sets.

pub mod circuits;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod optimality;
#[cfg(test)]
mod properties;
pub mod quad;
pub mod transcribe;

pub use error::{Error, Result};
