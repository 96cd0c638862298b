pub mod anchors;
pub mod augment;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod head;
pub mod nn;
pub mod raster;
pub mod selfcheck;
pub mod synthgen;
pub mod train;

pub use error::{Error, Result};
