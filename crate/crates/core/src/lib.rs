//! Multi-task trajectory generation from demonstrations: a conditional
//! variational auto-encoder learns forcing profiles of a second-order
//! attractor system, one model per task family.

pub mod dataset;
pub mod dmp;
pub mod error;
pub mod generator;
pub mod handwriting;
pub mod cvae;
pub mod nn;
pub mod sim2d;

pub use error::{Error, Result};
