//! Tensor arithmetic, seeded random streams, Adam and gradient checking.

mod adam;
mod gradcheck;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::finite_diff_check;
pub use rng::{gaussian, RngStream};
pub use tensor::{axpy, dot, Tensor};
