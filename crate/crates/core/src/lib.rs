//! Maximum-entropy dynamic games, inverse reinforcement learning, equilibrium
//! mode enumeration, coverage losses and equilibrium-aware trajectory sampling.

pub mod diversity;
pub mod error;
pub mod game;
pub mod irl;
pub mod modes;
pub mod numeric;
pub mod predictor;
pub mod sampling;
pub mod scenarios;
pub mod track;

pub mod cli;

pub use error::{Error, Result};
