//! Certified over-bounds of scaled graphs of reset systems.

pub mod error;
pub mod hhull;
pub mod linalg;
pub mod lmi;
pub mod partition;
pub mod plot;
pub mod region;
pub mod reset_model;
pub mod sdp;
pub mod simulator;

pub use error::{Error, Result};
