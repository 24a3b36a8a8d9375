//! Procedural level generators searched with quality-diversity optimization.

pub mod analysis;
pub mod error;
pub mod grid;
pub mod io;
pub mod nets;
pub mod objective;
pub mod qd;
pub mod render;
pub mod trainer;

pub use error::{Error, Result};
