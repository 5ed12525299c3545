//! Wavelet trend/variation representations of clinical visit sequences.
//!
//! Pipeline: each dynamic feature's visit series is split into a trend and a
//! variation band by a single-level symlet transform ([`wavelet`]); the two
//! bands are mixed by dilated convolutions ([`men`]); attention over
//! first-order differences of the variation band ([`fodam`]) and a static
//! embedding join them in a softmax classifier ([`model`]). Gradients come
//! from a small reverse-mode tape ([`autodiff`]).

pub mod autodiff;
pub mod checkpoint;
pub mod data;
mod error;
pub mod fodam;
pub mod men;
pub mod metrics;
pub mod model;
pub mod train;
pub mod wavelet;

pub use error::{Error, ErrorClass, Result};
