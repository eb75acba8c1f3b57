//! Differential face-morph detection through landmark/appearance
//! disentanglement, with the classical texture and landmark baselines and the
//! biometric error metrics used to compare them.

pub mod cli;
pub mod detect;
pub mod embednet;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod geometry;
pub mod gradcore;
pub mod imaging;

pub use error::{Error, Result};
