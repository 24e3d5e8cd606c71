//! Resonance-based low-regularity time integrators for stochastic cubic NLS and
//! the stochastic Manakov system on the torus, with the decorated-tree calculus
//! behind them and a Monte Carlo convergence harness.

pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod noise;
pub mod schemes;
pub mod spectral;
pub mod trees;

pub use error::{Error, Result};
