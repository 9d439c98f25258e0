//! Multilayer perceptrons with hand-derived backward passes, and the
//! sinusoidal step embedding used to condition the score network.

mod embedding;
mod mlp;

pub use embedding::{time_embed, TimeEmbedding};
pub use mlp::{mlp_forward, mlp_vjp, Activation, Layer, MlpCache, MlpGrads, MlpNetwork};
