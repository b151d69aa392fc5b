//! DELTA click-through-rate model: truncated attention with a curriculum
//! bottleneck, element-wise fusion gates and an auxiliary cross-net loss.

pub mod data;
pub mod eeo;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod trainer;

pub use error::{Error, Result};
