use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("model is frozen; refusing to apply gradients to {0}")]
    Frozen(&'static str),

    #[error("training diverged in {stage} at step {step}: loss = {loss}")]
    Diverged {
        stage: &'static str,
        step: usize,
        loss: f64,
    },

    #[error("non-finite guidance gradient at diffusion step {step}")]
    GuidanceNonFinite { step: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_shape(
    context: &'static str,
    expected: &[usize],
    actual: &[usize],
) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            context,
            expected: vec![expected],
            actual: vec![actual],
        });
    }
    Ok(())
}
