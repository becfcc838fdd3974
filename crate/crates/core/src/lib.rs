//! Desk-scale sequential recommendation stack: multi-scale behavior sequence
//! extraction, adaptive-temperature attention blocks with gated fusion, a
//! KV-cached "single user, multiple items" serving path, and a
//! FLOPs-accounted experiment harness.

pub mod cli;
pub mod digest;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod par;
pub mod sequence;
pub mod serving;
pub mod training;

pub use error::{Error, Result};
