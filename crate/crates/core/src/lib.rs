//! Hierarchical coordination of coupled subsystems by fixed-point iteration on
//! coupling profiles.
//!
//! A network of subsystems exchanges signal trajectories over a prediction
//! horizon. Given presumed incoming profiles, each subsystem predicts its
//! outgoing profiles; a coordinator routes them back as the next presumption
//! until the profiles are coherent. The update rule is pluggable: plain
//! substitution, scalar mixing, a Riccati-designed matrix filter, or Anderson
//! acceleration with systematic restarts.

pub mod benchmark;
pub mod config;
pub mod coordinator;
pub mod engine;
pub mod error;
pub mod network;
pub mod plant;
pub mod subsystem;

pub use error::{Error, Result};
