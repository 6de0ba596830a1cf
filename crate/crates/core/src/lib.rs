pub mod collapse;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod operators;
pub mod runner;
pub mod scenarios;
pub mod sde;
pub mod state;
pub mod stats;
pub mod system;
pub mod walk;

pub use error::{Error, Result};
