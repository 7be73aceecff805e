//! Binaural sound source localization and separation.
//!
//! A probabilistic piecewise-affine map is learned from source directions
//! (azimuth, elevation) to high-dimensional interaural cue vectors, then
//! inverted in closed form to localize one source from a sparse spectrogram,
//! or by variational EM to localize and separate several.

pub mod cli;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod localize;
pub mod manifold;
pub mod persist;
pub mod ppam;
pub mod spectro;
pub mod synth;
pub mod vessl;

pub use error::{Error, Result};
