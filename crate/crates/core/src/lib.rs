pub mod augment;
pub mod camera;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod guidance;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod scene;

pub use error::{Error, Result};
