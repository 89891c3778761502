//! Desk-scale laboratory for environment-aware learned physical-layer coding
//! over UAV free-space-optical links.
//!
//! The crate simulates a composite UAV-FSO fading channel (Beer-Lambert
//! attenuation, Malaga turbulence, pointing error, angle-of-arrival outage),
//! trains a transformer autoencoder whose encoder and decoder are conditioned
//! on the physical environment through cross-attention, and trains a DQN
//! controller that picks which transformer layers to run from the current
//! environment. An evaluation harness measures BER against SNR, layer usage,
//! classic baselines (uncoded OOK and hard-decision Hamming(7,4)), inference
//! timing, and image-transmission PSNR over binary PPM files.

pub mod channel;
pub mod error;
pub mod numerics;

pub use error::{Error, Result};
