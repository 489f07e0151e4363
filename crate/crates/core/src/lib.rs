//! Structure-guided diffusion super-resolution at desk scale.
//!
//! The crate wraps a deterministic DDIM loop with a three-part intervention:
//! an early screening stage that captures the clean-latent estimate most
//! similar to the LR input, a similarity-weighted blend of the two noise
//! predictions, and a decaying insertion of the captured latent into every
//! later clean estimate. Around that sit the image substrate, the LR
//! degradation pipeline, full-reference metrics, and an experiment harness.

pub mod degrade;
pub mod diffusion;
pub mod error;
pub mod harness;
pub mod image;
pub mod infer;
pub mod io;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
