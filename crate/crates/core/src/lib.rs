//! Contextual RNN transducer for speech recognition with metadata biasing.

pub mod decoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod recurrent;
pub mod contextualizer;
pub mod rnnt;
pub mod tokenizer;

pub use error::{Error, Result};
