//! Next-distribution autoregressive sequence modeling over continuous speech
//! latents, at desk scale: a Flow-VAE frame codec, an autoregressive
//! predictor of per-frame Gaussian distributions trained with KL divergence,
//! Gaussian speaker latents with seed-reproducible random voices, and
//! test-time training against a single reference utterance. Everything runs
//! end to end on a deterministic synthetic corpus with a built-in
//! matched-filter transcript oracle.

pub mod ar_lm;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evalsuite;
pub mod flow;
pub mod flow_vae;
pub mod gaussians;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod rng;
pub mod speaker;
pub mod train;
pub mod ttt;
pub mod wav;

pub use error::{NdistError, Result};
