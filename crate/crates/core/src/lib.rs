//! Stereo point-line visual odometry geometry engine.

pub mod config;
pub mod error;
pub mod frontend;
pub mod geometry;
pub mod line2d;
pub mod map;
pub mod optimizer;
pub mod pipeline;
pub mod synthetic;
pub mod trajectory;
pub mod triangulation;

pub use error::{Error, Result};
