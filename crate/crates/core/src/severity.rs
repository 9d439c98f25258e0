//! Severity encoder: from a degraded observation `y`, predict a clean-latent
//! estimate `z_hat` and the variance `v_hat` of that estimate's error.
//!
//! `v_hat = mean((H z_hat + b)^2)` where `H` is a learned `d x d` map and `b`
//! its bias, the dense analog of a 1x1 convolution over latent channels. Training minimizes
//!
//! ```text
//! (1/d)|z0 - z_hat|^2 + lambda_sigma (s2(z_hat - z0) - v_hat)^2 + lambda_im (1/n)|x0 - D0(z_hat)|^2
//! ```
//!
//! with `s2` the unbiased sample variance across latent coordinates. The loss
//! is differentiated exactly as written, including the dependence of `s2` on
//! `z_hat`.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{cosine_lr, shuffle, Autoencoder};
use crate::data::{corrupt, Sample};
use crate::degradations::DegradationFamily;
use crate::error::{check_len, check_shape, Error, Result};
use crate::nn::{MlpCache, MlpGrads, MlpNetwork};
use crate::numerics::{AdamConfig, AdamState, RngStream, Tensor};

/// Glorot range multiplier for the head. A small head starts `v_hat` near
/// zero, below any achievable error variance, so the error term never rewards
/// a worse `z_hat` early in fine-tuning.
pub const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SeverityEncoder {
    trunk: MlpNetwork,
    head: Tensor,
    head_bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeverityOutput {
    pub z_hat: Tensor,
    pub v_hat: f64,
}

impl SeverityEncoder {
    /// Trunk copied from the base encoder; head drawn from a scaled Glorot-uniform.
    pub fn from_autoencoder(ae: &Autoencoder, rng: &mut RngStream) -> Self {
        let d = ae.latent_dim();
        let limit = HEAD_INIT_SCALE * (6.0 / (2 * d) as f64).sqrt();
        let head = Tensor::new(
            vec![d, d],
            (0..d * d).map(|_| rng.uniform_range(-limit, limit)).collect(),
        )
        .expect("sized");
        Self {
            trunk: ae.encoder().clone(),
            head,
            head_bias: Tensor::zeros(&[d]),
        }
    }

    pub fn from_parts(trunk: MlpNetwork, head: Tensor, head_bias: Tensor) -> Result<Self> {
        let d = trunk.output_dim();
        check_shape("SeverityEncoder head", &[d, d], head.shape())?;
        check_shape("SeverityEncoder head bias", &[d], head_bias.shape())?;
        Ok(Self { trunk, head, head_bias })
    }

    pub fn trunk(&self) -> &MlpNetwork {
        &self.trunk
    }

    pub fn head(&self) -> &Tensor {
        &self.head
    }

    pub fn head_bias(&self) -> &Tensor {
        &self.head_bias
    }

    pub fn head_bias_mut(&mut self) -> &mut Tensor {
        &mut self.head_bias
    }

    pub fn head_mut(&mut self) -> &mut Tensor {
        &mut self.head
    }

    pub fn latent_dim(&self) -> usize {
        self.trunk.output_dim()
    }

    pub fn forward(&self, y: &Tensor) -> Result<SeverityOutput> {
        Ok(self.forward_with_cache(y)?.0)
    }

    fn forward_with_cache(&self, y: &Tensor) -> Result<(SeverityOutput, MlpCache, Vec<f64>)> {
        check_len("severity_forward", self.trunk.input_dim(), y.len())?;
        let (z_hat, cache) = self.trunk.forward(y.data())?;
        let h = self.head_apply(z_hat.data());
        let v_hat = h.iter().map(|v| v * v).sum::<f64>() / h.len() as f64;
        Ok((SeverityOutput { z_hat, v_hat }, cache, h))
    }

    fn head_apply(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        let w = self.head.data();
        let b = self.head_bias.data();
        (0..d)
            .map(|o| crate::numerics::dot(&w[o * d..(o + 1) * d], z) + b[o])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.params_mut();
        p.push(&mut self.head);
        p.push(&mut self.head_bias);
        p
    }

    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.params();
        p.push(&self.head);
        p.push(&self.head_bias);
        p
    }

    pub fn flatten_params(&self) -> Tensor {
        Tensor::from_vec(self.params().into_iter().flat_map(|t| t.data().to_vec()).collect())
    }

    pub fn set_flat_params(&mut self, flat: &Tensor) -> Result<()> {
        let total: usize = self.params().iter().map(|t| t.len()).sum();
        check_len("SeverityEncoder::set_flat_params", total, flat.len())?;
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

pub fn severity_forward(se: &SeverityEncoder, y: &Tensor) -> Result<SeverityOutput> {
    se.forward(y)
}

/// Unbiased sample variance `(1/(d-1)) sum (e_i - mean(e))^2`.
pub fn sample_variance(e: &Tensor) -> Result<f64> {
    let d = e.len();
    if d < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample variance needs at least 2 entries, got {d}"
        )));
    }
    let mean = e.mean();
    Ok(e.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (d - 1) as f64)
}

/// Which paths of the error term reach the trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorGradient {
    /// Exact derivative, through both `s2(z_hat - z0)` and `v_hat(z_hat)`.
    Full,
    /// `s2` is a constant target; the trunk still sees `v_hat(z_hat)`.
    DetachTarget,
    /// The error term trains the head only.
    HeadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityLossWeights {
    pub lambda_sigma: f64,
    pub lambda_im: f64,
    pub error_gradient: ErrorGradient,
}

impl Default for SeverityLossWeights {
    fn default() -> Self {
        Self {
            lambda_sigma: 10.0,
            lambda_im: 1.0,
            error_gradient: ErrorGradient::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SeverityLoss {
    pub total: f64,
    pub latent: f64,
    pub error: f64,
    pub image: f64,
}

impl SeverityLoss {
    fn add(&mut self, other: &SeverityLoss) {
        self.total += other.total;
        self.latent += other.latent;
        self.error += other.error;
        self.image += other.image;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.latent *= s;
        self.error *= s;
        self.image *= s;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeverityGrads {
    pub trunk: MlpGrads,
    pub head: Tensor,
    pub head_bias: Tensor,
}

impl SeverityGrads {
    fn zeros_like(se: &SeverityEncoder) -> Self {
        Self {
            trunk: MlpGrads::zeros_like(&se.trunk),
            head: Tensor::zeros(se.head.shape()),
            head_bias: Tensor::zeros(se.head_bias.shape()),
        }
    }

    fn accumulate(&mut self, other: &SeverityGrads) -> Result<()> {
        self.trunk.accumulate(&other.trunk)?;
        self.head.axpy(1.0, &other.head)?;
        self.head_bias.axpy(1.0, &other.head_bias)
    }

    fn scale(&mut self, s: f64) {
        self.trunk.scale(s);
        self.head = self.head.scale(s);
        self.head_bias = self.head_bias.scale(s);
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.trunk.tensors();
        t.push(&self.head);
        t.push(&self.head_bias);
        t
    }

    pub fn flatten(&self) -> Tensor {
        Tensor::from_vec(self.tensors().into_iter().flat_map(|t| t.data().to_vec()).collect())
    }
}

/// Loss value and exact gradients with respect to the severity encoder only.
pub fn severity_loss(
    se: &SeverityEncoder,
    ae: &Autoencoder,
    x0: &Tensor,
    y: &Tensor,
    weights: &SeverityLossWeights,
) -> Result<(SeverityLoss, SeverityGrads)> {
    if !ae.is_frozen() {
        return Err(Error::InvalidArgument(
            "severity training requires a frozen autoencoder".into(),
        ));
    }
    let z0 = ae.encode(x0)?;
    severity_loss_with_target(se, ae, x0, &z0, y, weights)
}

fn severity_loss_with_target(
    se: &SeverityEncoder,
    ae: &Autoencoder,
    x0: &Tensor,
    z0: &Tensor,
    y: &Tensor,
    weights: &SeverityLossWeights,
) -> Result<(SeverityLoss, SeverityGrads)> {
    let d = se.latent_dim();
    let n = ae.pixels() as f64;
    let df = d as f64;
    check_len("severity_loss latent", d, z0.len())?;
    let (out, trunk_cache, h) = se.forward_with_cache(y)?;
    let z_hat = out.z_hat.data();

    // latent reconstruction
    let e: Vec<f64> = z_hat.iter().zip(z0.data()).map(|(a, b)| a - b).collect();
    let latent = e.iter().map(|v| v * v).sum::<f64>() / df;
    let mut g_z: Vec<f64> = e.iter().map(|v| 2.0 * v / df).collect();

    // error prediction
    let e_mean = e.iter().sum::<f64>() / df;
    let s2 = e.iter().map(|v| (v - e_mean).powi(2)).sum::<f64>() / (df - 1.0);
    let delta = s2 - out.v_hat;
    let error = delta * delta;
    let coef = 2.0 * weights.lambda_sigma * delta;
    let mode = weights.error_gradient;
    if mode == ErrorGradient::Full {
        // d s2 / d z_hat
        for (g, v) in g_z.iter_mut().zip(&e) {
            *g += coef * 2.0 * (v - e_mean) / (df - 1.0);
        }
    }
    // d v_hat / d z_hat = (2/d) H^T h ;  d v_hat / d H = (2/d) h z_hat^T ;  d v_hat / d b = (2/d) h
    let w = se.head.data();
    let mut g_head = vec![0.0; d * d];
    let mut g_bias = vec![0.0; d];
    for o in 0..d {
        let s = -coef * 2.0 * h[o] / df;
        g_bias[o] = s;
        if s == 0.0 {
            continue;
        }
        for k in 0..d {
            if mode != ErrorGradient::HeadOnly {
                g_z[k] += s * w[o * d + k];
            }
            g_head[o * d + k] = s * z_hat[k];
        }
    }

    // image reconstruction through the frozen decoder
    let mut image = 0.0;
    if weights.lambda_im != 0.0 {
        let (xr, dec_cache) = ae.decode_with_cache(&out.z_hat)?;
        check_len("severity_loss image", xr.len(), x0.len())?;
        let diff: Vec<f64> = xr.data().iter().zip(x0.data()).map(|(a, b)| a - b).collect();
        image = diff.iter().map(|v| v * v).sum::<f64>() / n;
        let up = Tensor::new(
            xr.shape().to_vec(),
            diff.iter().map(|v| 2.0 * weights.lambda_im * v / n).collect(),
        )?;
        let g_dec = ae.decode_vjp(&dec_cache, &up)?;
        for (g, v) in g_z.iter_mut().zip(g_dec.data()) {
            *g += v;
        }
    }

    let total = latent + weights.lambda_sigma * error + weights.lambda_im * image;
    if !total.is_finite() {
        return Err(Error::NonFinite {
            context: "severity loss".into(),
        });
    }
    let (_, trunk) = se.trunk.vjp(&trunk_cache, &g_z)?;
    Ok((
        SeverityLoss {
            total,
            latent,
            error,
            image,
        },
        SeverityGrads {
            trunk,
            head: Tensor::new(vec![d, d], g_head)?,
            head_bias: Tensor::from_vec(g_bias),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeverityTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub noise_std: f64,
    pub weights: SeverityLossWeights,
}

impl Default for SeverityTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 16,
            learning_rate: 1e-3,
            final_lr_fraction: 0.05,
            noise_std: crate::degradations::DEFAULT_NOISE_STD,
            weights: SeverityLossWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeverityReport {
    /// Validation loss at initialization and after every epoch.
    pub val_loss: Vec<SeverityLoss>,
}

/// Fixed validation observations: level from the sample metadata (uniform draw
/// when absent) and a per-sample noise stream.
pub fn validation_pairs(
    samples: &[Sample],
    family: &DegradationFamily,
    noise_std: f64,
    rng: &RngStream,
) -> Result<Vec<(Tensor, Tensor)>> {
    samples
        .iter()
        .map(|s| {
            let mut r = rng.domain("severity.val", s.id as u64);
            let t = match s.t {
                Some(t) => t,
                None => r.uniform(),
            };
            let c = corrupt(&s.image, t, family, noise_std, &mut r)?;
            Ok((s.image.clone(), c.y))
        })
        .collect()
}

pub fn evaluate_severity_loss(
    se: &SeverityEncoder,
    ae: &Autoencoder,
    pairs: &[(Tensor, Tensor)],
    weights: &SeverityLossWeights,
) -> Result<SeverityLoss> {
    let mut acc = SeverityLoss::default();
    for (x0, y) in pairs {
        let (l, _) = severity_loss(se, ae, x0, y, weights)?;
        acc.add(&l);
    }
    acc.scale(1.0 / pairs.len().max(1) as f64);
    Ok(acc)
}

/// Fine-tunes `se` on observations corrupted at a fresh uniform level per
/// sample and epoch.
pub fn train_severity(
    se: &mut SeverityEncoder,
    ae: &Autoencoder,
    train: &[Sample],
    val: &[Sample],
    family: &DegradationFamily,
    config: &SeverityTrainConfig,
    rng: &RngStream,
) -> Result<SeverityReport> {
    if !ae.is_frozen() {
        return Err(Error::InvalidArgument(
            "severity training requires a frozen autoencoder".into(),
        ));
    }
    if train.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let latents: Vec<Tensor> = train.iter().map(|s| ae.encode(&s.image)).collect::<Result<_>>()?;
    let val_pairs = validation_pairs(val, family, config.noise_std, rng)?;
    let mut report = SeverityReport {
        val_loss: vec![evaluate_severity_loss(se, ae, &val_pairs, &config.weights)?],
    };
    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), se.params());
    let batch = config.batch_size.max(1);
    let total_steps = (train.len().div_ceil(batch) * config.epochs).max(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut epoch_rng = rng.domain("severity.epoch", epoch as u64);
        shuffle(&mut order, &mut epoch_rng);
        for chunk in order.chunks(batch) {
            let mut grads = SeverityGrads::zeros_like(se);
            let mut loss = 0.0;
            for &idx in chunk {
                let s = &train[idx];
                let mut sample_rng = epoch_rng.substream(s.id as u64);
                let t = sample_rng.uniform();
                let c = corrupt(&s.image, t, family, config.noise_std, &mut sample_rng)?;
                let (l, g) =
                    severity_loss_with_target(se, ae, &s.image, &latents[idx], &c.y, &config.weights)?;
                loss += l.total;
                grads.accumulate(&g)?;
            }
            let inv = 1.0 / chunk.len() as f64;
            loss *= inv;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "severity",
                    step,
                    loss,
                });
            }
            grads.scale(inv);
            adam.config.learning_rate = cosine_lr(
                config.learning_rate,
                config.final_lr_fraction,
                step as f64 / total_steps as f64,
            );
            let mut params = se.params_mut();
            adam.step(&mut params, &grads.tensors())?;
            step += 1;
        }
        let v = evaluate_severity_loss(se, ae, &val_pairs, &config.weights)?;
        if !v.total.is_finite() {
            return Err(Error::Diverged {
                stage: "severity",
                step,
                loss: v.total,
            });
        }
        report.val_loss.push(v);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    fn tiny_setup(seed: u64) -> (Autoencoder, SeverityEncoder) {
        let mut rng = RngStream::new(seed, 0);
        let mut ae = Autoencoder::new([4, 4], &[6], 4, &mut rng).unwrap();
        ae.freeze();
        let mut se = SeverityEncoder::from_autoencoder(&ae, &mut rng);
        // move away from the exact E0 copy so every loss term is active
        let mut flat = se.flatten_params();
        for v in flat.data_mut() {
            *v += 0.1 * rng.normal();
        }
        se.set_flat_params(&flat).unwrap();
        (ae, se)
    }

    #[test]
    fn zero_head_gives_zero_severity() {
        let (_, mut se) = tiny_setup(1);
        *se.head_mut() = Tensor::zeros(&[4, 4]);
        *se.head_bias_mut() = Tensor::zeros(&[4]);
        let mut rng = RngStream::new(2, 0);
        for _ in 0..5 {
            let y = rng.gaussian(&[4, 4]);
            assert_eq!(se.forward(&y).unwrap().v_hat, 0.0);
        }
    }

    #[test]
    fn identity_head_on_ones_gives_one() {
        use crate::nn::{Activation, Layer};
        let trunk = MlpNetwork::from_layers(vec![Layer {
            weight: Tensor::zeros(&[4, 16]),
            bias: Tensor::full(&[4], 1.0),
            activation: Activation::Identity,
        }])
        .unwrap();
        let mut head = Tensor::zeros(&[4, 4]);
        for k in 0..4 {
            head.data_mut()[k * 4 + k] = 1.0;
        }
        let se = SeverityEncoder::from_parts(trunk, head, Tensor::zeros(&[4])).unwrap();
        let out = se.forward(&Tensor::zeros(&[4, 4])).unwrap();
        assert_eq!(out.v_hat, 1.0);
        assert_eq!(out.z_hat.data(), &[1.0; 4]);
    }

    #[test]
    fn sample_variance_cases() {
        assert!(sample_variance(&Tensor::full(&[7], 3.2)).unwrap() < 1e-28);
        assert_eq!(sample_variance(&Tensor::full(&[7], 0.5)).unwrap(), 0.0);
        assert_eq!(sample_variance(&Tensor::from_vec(vec![0.0, 2.0])).unwrap(), 2.0);
        assert!(sample_variance(&Tensor::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn sample_variance_is_unbiased() {
        let mut rng = RngStream::new(3, 0);
        let trials = 10_000;
        let mean = (0..trials)
            .map(|_| sample_variance(&rng.gaussian(&[16])).unwrap())
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 1.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn loss_vanishes_at_exact_prediction() {
        use crate::nn::{Activation, Layer};
        let mut rng = RngStream::new(4, 0);
        let mut ae = Autoencoder::new([4, 4], &[6], 4, &mut rng).unwrap();
        ae.freeze();
        let x0 = rng.gaussian(&[4, 4]);
        let z0 = ae.encode(&x0).unwrap();
        let xr = ae.decode(&z0).unwrap();
        // trunk emitting z0 for any input, head zero -> v_hat = 0 = s2(0)
        let trunk = MlpNetwork::from_layers(vec![Layer {
            weight: Tensor::zeros(&[4, 16]),
            bias: z0.clone(),
            activation: Activation::Identity,
        }])
        .unwrap();
        let se = SeverityEncoder::from_parts(trunk, Tensor::zeros(&[4, 4]), Tensor::zeros(&[4])).unwrap();
        // x0 := D0(z0) so the image term vanishes as well
        let (loss, _) =
            severity_loss_with_target(&se, &ae, &xr, &z0, &x0, &SeverityLossWeights::default()).unwrap();
        assert_eq!(loss.total, 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (ae, se) = tiny_setup(10 + seed);
            let mut rng = RngStream::new(100 + seed, 0);
            let x0 = Tensor::new(vec![4, 4], (0..16).map(|_| rng.uniform()).collect()).unwrap();
            let y = x0.map(|v| v * 0.8 + 0.05);
            let w = SeverityLossWeights::default();
            let (_, grads) = severity_loss(&se, &ae, &x0, &y, &w).unwrap();
            let theta = se.flatten_params();
            let mut probe = se.clone();
            let f = |p: &Tensor| {
                probe.set_flat_params(p).unwrap();
                severity_loss(&probe, &ae, &x0, &y, &w).unwrap().0.total
            };
            let err = finite_diff_check(f, &theta, &grads.flatten(), 1e-5).unwrap();
            assert!(err < 1e-5, "seed {seed}: err {err}");
        }
    }

    #[test]
    fn head_gets_no_gradient_without_error_term() {
        let (ae, se) = tiny_setup(7);
        let mut rng = RngStream::new(8, 0);
        let x0 = rng.gaussian(&[4, 4]);
        let y = rng.gaussian(&[4, 4]);
        let w = SeverityLossWeights {
            lambda_sigma: 0.0,
            lambda_im: 0.0,
            ..Default::default()
        };
        let (_, g) = severity_loss(&se, &ae, &x0, &y, &w).unwrap();
        assert!(g.head.data().iter().all(|&v| v == 0.0));
        assert!(g.head_bias.data().iter().all(|&v| v == 0.0));
        assert!(g.trunk.flatten().norm() > 0.0);
    }

    #[test]
    fn head_only_mode_keeps_error_term_out_of_the_trunk() {
        let (ae, se) = tiny_setup(11);
        let mut rng = RngStream::new(12, 0);
        let x0 = rng.gaussian(&[4, 4]);
        let y = rng.gaussian(&[4, 4]);
        let head_only = SeverityLossWeights {
            error_gradient: ErrorGradient::HeadOnly,
            ..Default::default()
        };
        let no_error = SeverityLossWeights {
            lambda_sigma: 0.0,
            ..Default::default()
        };
        let (_, g) = severity_loss(&se, &ae, &x0, &y, &head_only).unwrap();
        let (_, g0) = severity_loss(&se, &ae, &x0, &y, &no_error).unwrap();
        assert_eq!(g.trunk.flatten(), g0.trunk.flatten());
        assert!(g.head.norm() > 0.0);
        let (_, full) = severity_loss(&se, &ae, &x0, &y, &SeverityLossWeights::default()).unwrap();
        let detached = SeverityLossWeights {
            error_gradient: ErrorGradient::DetachTarget,
            ..Default::default()
        };
        let (_, gd) = severity_loss(&se, &ae, &x0, &y, &detached).unwrap();
        assert_eq!(gd.head, full.head);
        assert_ne!(gd.trunk.flatten(), full.trunk.flatten());
    }

    #[test]
    fn requires_frozen_autoencoder() {
        let mut rng = RngStream::new(9, 0);
        let ae = Autoencoder::new([4, 4], &[6], 4, &mut rng).unwrap();
        let se = SeverityEncoder::from_autoencoder(&ae, &mut rng);
        let x = Tensor::zeros(&[4, 4]);
        assert!(severity_loss(&se, &ae, &x, &x, &SeverityLossWeights::default()).is_err());
    }

    #[test]
    fn initial_latent_loss_is_base_encoder_error() {
        let mut rng = RngStream::new(10, 0);
        let mut ae = Autoencoder::new([4, 4], &[6], 4, &mut rng).unwrap();
        ae.freeze();
        let se = SeverityEncoder::from_autoencoder(&ae, &mut rng);
        let x0 = rng.gaussian(&[4, 4]);
        let y = x0.map(|v| 0.5 * v);
        let (loss, _) = severity_loss(&se, &ae, &x0, &y, &SeverityLossWeights::default()).unwrap();
        let direct = ae.encode(&x0).unwrap().sub(&ae.encode(&y).unwrap()).unwrap().norm_sq() / 4.0;
        assert!((loss.latent - direct).abs() < 1e-15);
    }
}
