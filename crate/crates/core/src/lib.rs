//! Hybrid foreground/background radiance fields for inside-looking-out
//! unbounded scenes.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod field;
pub mod geometry;
pub mod renderer;
pub mod sampler;
pub mod scenes;
pub mod training;

pub use error::{Error, Result};
