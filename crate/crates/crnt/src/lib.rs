//! Harness around the contextual transducer: synthetic corpus generation,
//! feature and manifest files, training, checkpoints and the command line.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod error;
pub mod features;
pub mod manifest;
pub mod specaug;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
