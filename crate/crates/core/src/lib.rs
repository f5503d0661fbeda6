mod error;
pub mod aux_prior;
pub mod cli_persistence;
pub mod gaussian_latent;
pub mod data_synth;
pub mod diffusion_decoder;
pub mod evaluation;
pub mod generation;
pub mod multimodal_model;
pub mod noise_schedule;
pub mod sampling;

pub use error::{Error, Result};
