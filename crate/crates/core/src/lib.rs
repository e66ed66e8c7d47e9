pub mod archive;
pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod melfront;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod prepare;
pub mod probes;
pub mod synth;
pub mod training;
pub mod vocoder;

pub use error::{Error, Result};
