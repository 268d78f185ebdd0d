//! Motion-centric single-object tracking on LiDAR point clouds.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod model;
pub mod nn;
pub mod selfcheck;
pub mod semi;
pub mod train;
pub mod tracker;

pub use error::{Error, Result};
