//! Habit-forming consumption, hedging bounds and equilibrium on finite event trees.

pub mod asymptotics;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod estimates;
pub mod habits;
pub mod io;
pub mod market;
pub mod optimizer;
pub mod oracle;
pub mod random;
pub mod tree;
pub mod verify;

pub use error::{Error, Result};
