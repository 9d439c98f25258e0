//! Base encoder/decoder pair defining the latent space `z = E0(x)`,
//! `x ~= D0(z)`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, MlpCache, MlpGrads, MlpNetwork};
use crate::numerics::{AdamConfig, AdamState, RngStream, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    encoder: MlpNetwork,
    decoder: MlpNetwork,
    image_shape: [usize; 2],
    frozen: bool,
}

impl Autoencoder {
    /// Symmetric architecture: `hidden` lists encoder hidden widths, the
    /// decoder mirrors them.
    pub fn new(
        image_shape: [usize; 2],
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let n = image_shape[0] * image_shape[1];
        let mut enc_dims = vec![n];
        enc_dims.extend_from_slice(hidden);
        enc_dims.push(latent_dim);
        let dec_dims: Vec<usize> = enc_dims.iter().rev().copied().collect();
        let encoder = MlpNetwork::new(&enc_dims, Activation::Tanh, Activation::Identity, rng)?;
        let decoder = MlpNetwork::new(&dec_dims, Activation::Tanh, Activation::Identity, rng)?;
        Self::from_parts(encoder, decoder, image_shape, false)
    }

    pub fn from_parts(
        encoder: MlpNetwork,
        decoder: MlpNetwork,
        image_shape: [usize; 2],
        frozen: bool,
    ) -> Result<Self> {
        check_len("Autoencoder encoder input", image_shape[0] * image_shape[1], encoder.input_dim())?;
        check_len("Autoencoder decoder output", image_shape[0] * image_shape[1], decoder.output_dim())?;
        check_len("Autoencoder latent", encoder.output_dim(), decoder.input_dim())?;
        Ok(Self {
            encoder,
            decoder,
            image_shape,
            frozen,
        })
    }

    pub fn encoder(&self) -> &MlpNetwork {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpNetwork {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn image_shape(&self) -> [usize; 2] {
        self.image_shape
    }

    pub fn pixels(&self) -> usize {
        self.image_shape[0] * self.image_shape[1]
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        check_len("encode", self.pixels(), x.len())?;
        self.encoder.predict(x.data())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode_with_cache(z)?.0)
    }

    pub fn decode_with_cache(&self, z: &Tensor) -> Result<(Tensor, MlpCache)> {
        check_len("decode", self.latent_dim(), z.len())?;
        let (out, cache) = self.decoder.forward(z.data())?;
        Ok((out.reshape(&self.image_shape)?, cache))
    }

    /// Gradient of `<upstream, D0(z)>` with respect to `z`.
    pub fn decode_vjp(&self, cache: &MlpCache, upstream: &Tensor) -> Result<Tensor> {
        self.decoder.vjp_input(cache, upstream.data())
    }

    /// Adds `scale * grads` to encoder and decoder; refused once frozen.
    pub fn apply_gradients(
        &mut self,
        encoder_grads: &MlpGrads,
        decoder_grads: &MlpGrads,
        scale: f64,
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen("autoencoder"));
        }
        self.encoder.apply_update(encoder_grads, scale)?;
        self.decoder.apply_update(decoder_grads, scale)
    }

    fn params_mut(&mut self) -> Result<Vec<&mut Tensor>> {
        if self.frozen {
            return Err(Error::Frozen("autoencoder"));
        }
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        Ok(p)
    }

    /// Re-parameterizes the latent space to zero mean and unit variance per
    /// coordinate over `images`, folding the affine map into the last encoder
    /// layer and the first decoder layer. `D0(E0(x))` is unchanged.
    pub fn standardize_latents(&mut self, images: &[&Tensor]) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen("autoencoder"));
        }
        if images.len() < 2 {
            return Err(Error::InvalidArgument("need at least two images to standardize".into()));
        }
        let d = self.latent_dim();
        let latents: Vec<Tensor> = images.iter().map(|x| self.encode(x)).collect::<Result<_>>()?;
        let count = latents.len() as f64;
        let mut mean = vec![0.0; d];
        for z in &latents {
            for (m, v) in mean.iter_mut().zip(z.data()) {
                *m += v / count;
            }
        }
        let mut std = vec![0.0; d];
        for z in &latents {
            for k in 0..d {
                std[k] += (z.data()[k] - mean[k]).powi(2) / (count - 1.0);
            }
        }
        for s in &mut std {
            // degenerate coordinates are only centered
            *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
        }

        let last = self.encoder.layers_mut().last_mut().expect("nonempty");
        let in_dim = last.in_dim();
        for k in 0..d {
            for v in &mut last.weight.data_mut()[k * in_dim..(k + 1) * in_dim] {
                *v /= std[k];
            }
            let b = &mut last.bias.data_mut()[k];
            *b = (*b - mean[k]) / std[k];
        }

        let first = &mut self.decoder.layers_mut()[0];
        let out_dim = first.out_dim();
        let w = first.weight.data().to_vec();
        for o in 0..out_dim {
            let mut shift = 0.0;
            for k in 0..d {
                shift += w[o * d + k] * mean[k];
                first.weight.data_mut()[o * d + k] = w[o * d + k] * std[k];
            }
            first.bias.data_mut()[o] += shift;
        }
        Ok(())
    }

    /// SHA-256 over all parameters (little-endian bytes, layer order).
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for p in self.encoder.params().into_iter().chain(self.decoder.params()) {
            for v in p.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Per-pixel reconstruction MSE averaged over `images`.
    pub fn reconstruction_mse(&self, images: &[&Tensor]) -> Result<f64> {
        let mut total = 0.0;
        for x in images {
            let xr = self.decode(&self.encode(x)?)?;
            check_len("reconstruction_mse", self.pixels(), x.len())?;
            let sq: f64 = xr.data().iter().zip(x.data()).map(|(a, b)| (a - b).powi(2)).sum();
            total += sq / self.pixels() as f64;
        }
        Ok(total / images.len().max(1) as f64)
    }
}

pub fn encode(ae: &Autoencoder, x: &Tensor) -> Result<Tensor> {
    ae.encode(x)
}

pub fn decode(ae: &Autoencoder, z: &Tensor) -> Result<Tensor> {
    ae.decode(z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Final learning rate as a fraction of the initial one (cosine decay).
    pub final_lr_fraction: f64,
    pub val_mse_threshold: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64],
            latent_dim: 16,
            epochs: 60,
            batch_size: 16,
            learning_rate: 1e-3,
            final_lr_fraction: 0.05,
            val_mse_threshold: 5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderReport {
    /// Monitored training MSE before the first epoch and after every epoch.
    pub train_mse: Vec<f64>,
    pub val_mse: f64,
    pub threshold: f64,
    pub digest: String,
}

impl AutoencoderReport {
    pub fn meets_threshold(&self) -> bool {
        self.val_mse < self.threshold
    }
}

pub(crate) fn cosine_lr(base: f64, final_fraction: f64, progress: f64) -> f64 {
    let floor = base * final_fraction;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos())
}

/// Trains with per-pixel MSE and Adam, standardizes the latent space on the
/// training images, then freezes the model.
pub fn train_autoencoder(
    train: &[&Tensor],
    val: &[&Tensor],
    config: &AutoencoderConfig,
    rng: &mut RngStream,
) -> Result<(Autoencoder, AutoencoderReport)> {
    let Some(first) = train.first() else {
        return Err(Error::InvalidArgument("training set is empty".into()));
    };
    let &[h, w] = first.shape() else {
        return Err(Error::InvalidArgument("training images must be 2-D".into()));
    };
    let mut init_rng = rng.substream(0);
    let mut ae = Autoencoder::new([h, w], &config.hidden, config.latent_dim, &mut init_rng)?;
    let n = ae.pixels() as f64;
    let batch = config.batch_size.max(1);
    let steps_per_epoch = train.len().div_ceil(batch);
    let total_steps = (steps_per_epoch * config.epochs).max(1);

    let mut adam = {
        let params: Vec<&Tensor> = ae.encoder.params().into_iter().chain(ae.decoder.params()).collect();
        AdamState::new(AdamConfig::with_lr(config.learning_rate), params)
    };

    let monitor: Vec<&Tensor> = train.iter().take(256).copied().collect();
    let mut train_mse = vec![ae.reconstruction_mse(&monitor)?];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng.substream(1);
    let mut step = 0usize;
    for _epoch in 0..config.epochs {
        shuffle(&mut order, &mut shuffle_rng);
        for chunk in order.chunks(batch) {
            let mut enc_g = MlpGrads::zeros_like(&ae.encoder);
            let mut dec_g = MlpGrads::zeros_like(&ae.decoder);
            let mut loss = 0.0;
            for &idx in chunk {
                let x = train[idx];
                let (z, enc_cache) = ae.encoder.forward(x.data())?;
                let (xr, dec_cache) = ae.decoder.forward(z.data())?;
                let diff: Vec<f64> = xr.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
                loss += diff.iter().map(|v| v * v).sum::<f64>() / n;
                let up: Vec<f64> = diff.iter().map(|v| 2.0 * v / n).collect();
                let (gz, dg) = ae.decoder.vjp(&dec_cache, &up)?;
                let (_, eg) = ae.encoder.vjp(&enc_cache, gz.data())?;
                enc_g.accumulate(&eg)?;
                dec_g.accumulate(&dg)?;
            }
            let inv = 1.0 / chunk.len() as f64;
            loss *= inv;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "autoencoder",
                    step,
                    loss,
                });
            }
            enc_g.scale(inv);
            dec_g.scale(inv);
            adam.config.learning_rate = cosine_lr(
                config.learning_rate,
                config.final_lr_fraction,
                step as f64 / total_steps as f64,
            );
            let grads: Vec<&Tensor> = enc_g.tensors().into_iter().chain(dec_g.tensors()).collect();
            let mut params = ae.params_mut()?;
            adam.step(&mut params, &grads)?;
            step += 1;
        }
        let mse = ae.reconstruction_mse(&monitor)?;
        if !mse.is_finite() {
            return Err(Error::Diverged {
                stage: "autoencoder",
                step,
                loss: mse,
            });
        }
        train_mse.push(mse);
    }

    ae.standardize_latents(train)?;
    ae.freeze();
    let val_mse = ae.reconstruction_mse(if val.is_empty() { train } else { val })?;
    let report = AutoencoderReport {
        train_mse,
        val_mse,
        threshold: config.val_mse_threshold,
        digest: ae.digest(),
    };
    Ok((ae, report))
}

pub(crate) fn shuffle(order: &mut [usize], rng: &mut RngStream) {
    for i in (1..order.len()).rev() {
        let j = rng.int_range(0, i);
        order.swap(i, j);
    }
}
