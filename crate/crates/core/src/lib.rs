//! Desk-scale egocentric world simulator.
//!
//! The pipeline turns a first frame and a human-motion sequence into an
//! egocentric video by jointly denoising video and point-map latents. The
//! modules cover camera geometry, motion representation, latent codecs, the
//! diffusion model and sampler, a synthetic dataset pipeline with
//! reprojection filtering, and two-stage training with evaluation metrics.

pub mod codec;
pub mod config;
pub mod datapipe;
pub mod diffusion;
pub mod error;
pub mod geom;
pub mod io;
pub mod model;
pub mod motion;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
