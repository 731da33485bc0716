pub mod datamodel;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linegroup;
pub mod mining;
pub mod orchestrate;
pub mod synth;

pub use error::{Error, Result};
