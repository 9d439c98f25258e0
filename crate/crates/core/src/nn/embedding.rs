use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sinusoidal features of the normalized step `i / N`.
///
/// Frequencies run geometrically from 1 to `max_period^((h-1)/h)` for
/// `h = dim / 2`; the lowest one keeps the map injective on `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub max_period: f64,
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        Self {
            dim: 16,
            max_period: 1000.0,
        }
    }
}

impl TimeEmbedding {
    pub fn new(dim: usize, max_period: f64) -> Result<Self> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "time embedding dimension must be even and positive, got {dim}"
            )));
        }
        if !(max_period >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "max_period must be >= 1, got {max_period}"
            )));
        }
        Ok(Self { dim, max_period })
    }

    pub fn embed(&self, i: usize, n: usize) -> Result<Tensor> {
        if i == 0 || i > n {
            return Err(Error::InvalidArgument(format!(
                "time index {i} outside 1..={n}"
            )));
        }
        let half = self.dim / 2;
        let s = i as f64 / n as f64;
        let mut out = vec![0.0; self.dim];
        for k in 0..half {
            let freq = self.max_period.powf(k as f64 / half as f64);
            let arg = s * freq;
            out[k] = arg.sin();
            out[half + k] = arg.cos();
        }
        Ok(Tensor::from_vec(out))
    }
}

pub fn time_embed(emb: &TimeEmbedding, i: usize, n: usize) -> Result<Tensor> {
    emb.embed(i, n)
}
