//! Box (interval) bound propagation and propagation-tightness analysis for
//! deep linear and ReLU networks, with a small certified-training engine.

pub mod error;
pub mod init_theory;
pub mod bounds;
pub mod data;
pub mod dln;
pub mod net;
pub mod numerics;
pub mod reconstruction;
pub mod train;

pub use error::{Error, Result};
