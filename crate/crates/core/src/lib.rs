pub mod autoencoder;
pub mod data;
pub mod degradations;
pub mod error;
pub mod latent_diffusion;
pub mod nn;
pub mod numerics;
pub mod samplers;
pub mod severity;

pub use error::{Error, Result};
