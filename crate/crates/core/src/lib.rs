//! Beamforming-based acoustic maps for multi-channel speech, and a compact
//! convolutional classifier that separates genuine speech from loudspeaker replay.
//!
//! Pipeline: [`audio`] → [`stft`] → [`beamform`] (over a [`geometry`] grid) →
//! [`map`] → [`nn`], with [`sim`] providing synthetic recordings of known direction
//! and [`eval`] the dataset splits, EER and multi-run statistics.

pub mod audio;
pub mod beamform;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod linalg;
pub mod map;
pub mod mapio;
pub mod nn;
pub mod sim;
pub mod stft;

pub use error::{Error, Result};
