//! Binaural audio synthesis from mono sources.
//!
//! The pipeline: geometric warping aligns a mono signal to each ear's
//! propagation delay; a single-channel conditional diffusion model generates
//! the channel-shared part of the binaural target; a two-channel model then
//! generates the left/right channels conditioned on the first stage's
//! output. A classical warp + RIR + HRTF renderer serves both as a baseline
//! and as the ground-truth generator for synthetic datasets, and an
//! objective metric suite (waveform, spectral amplitude/phase, and
//! multi-resolution spectral losses) scores the results.

pub mod audio;
pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod dsp;
pub mod geometry;
pub mod metrics;
pub mod net;
pub mod pose;
pub mod stages;
pub mod warp;
pub mod wav;

pub use audio::{AudioClip, AudioError};
pub use pose::{Ear, PoseSample, PoseTrack};
