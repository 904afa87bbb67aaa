//! Federated learning simulator with per-round fairness analytics.

pub mod datakit;
pub mod engine;
pub mod error;
pub mod fairness;
pub mod numkit;
pub mod par;
pub mod shapley;
pub mod strategies;

pub use error::{Error, Result};
