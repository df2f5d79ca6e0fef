//! Sound source localization and tracking for small microphone arrays.
//!
//! A reliability-weighted PHAT steered beamformer searches a folded
//! hemisphere grid for the strongest candidates in every update, and a
//! particle filter per source turns those candidates into identified
//! trajectories. A scene simulator provides audio with ground truth.
//!
//! This crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod correlation;
pub mod error;
pub mod eval;
pub mod fft;
pub mod geometry;
pub mod localization;
pub mod pipeline;
pub mod scenes;
pub mod simulator;
pub mod spectral;
pub mod tracker;

pub use error::{Error, Result};
