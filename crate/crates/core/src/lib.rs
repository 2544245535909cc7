//! Cache-aware user selection for MIMO interference alignment networks:
//! a finite-state Markov channel, an alternating-minimisation IA solver, and
//! deep and tabular Q-learning agents over the resulting MDP.

pub mod agents;
pub mod cache;
pub mod env;
pub mod error;
pub mod fsmc;
pub mod harness;
pub mod ia;
pub mod linalg;
pub mod nn;

pub use error::{Error, Result};
