//! Geometry-uncertainty toolkit for monocular 3D detection.

pub mod cli;
pub mod confidence;
pub mod config;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod kitti;
pub mod propagation;
pub mod simulator;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
