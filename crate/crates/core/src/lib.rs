//! Temporal graph networks for dynamic node affinity prediction.

pub mod config;
pub mod error;
pub mod eval;
pub mod events;
pub mod exact;
pub mod expressivity;
pub mod heuristics;
pub mod learn;
pub mod pipeline;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
