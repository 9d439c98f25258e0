//! DDPM schedule, epsilon-prediction score model over latents, Tweedie
//! estimates and a closed-form diagonal-Gaussian oracle.

use serde::{Deserialize, Serialize};

use crate::autoencoder::cosine_lr;
use crate::error::{check_len, Error, Result};
use crate::nn::{Activation, MlpCache, MlpNetwork, TimeEmbedding};
use crate::numerics::{AdamConfig, AdamState, RngStream, Tensor};

/// Linear beta schedule; index `i` runs over `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    if steps > 1 && beta_start == beta_end {
        return Err(Error::InvalidArgument(
            "betas must be strictly increasing for more than one step".into(),
        ));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|k| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for b in &betas {
        prod *= 1.0 - b;
        alpha_bars.push(prod);
    }
    Ok(DiffusionSchedule { betas, alpha_bars })
}

impl DiffusionSchedule {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.len() {
            return Err(Error::InvalidArgument(format!(
                "diffusion index {i} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, i: usize) -> f64 {
        self.betas[i - 1]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        1.0 - self.betas[i - 1]
    }

    /// Cumulative product; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.alpha_bars[i - 1]
        }
    }

    /// Signal-to-noise ratio `alpha_bar / (1 - alpha_bar)`.
    pub fn snr(&self, i: usize) -> f64 {
        let ab = self.alpha_bar(i);
        ab / (1.0 - ab)
    }
}

/// `z_i = sqrt(alpha_bar_i) z0 + sqrt(1 - alpha_bar_i) eps` with the noise returned.
pub fn forward_sample_with_noise(
    sched: &DiffusionSchedule,
    z0: &Tensor,
    i: usize,
    rng: &mut RngStream,
) -> Result<(Tensor, Tensor)> {
    sched.check(i)?;
    let eps = rng.gaussian(z0.shape());
    let ab = sched.alpha_bar(i);
    let mut zi = z0.scale(ab.sqrt());
    zi.axpy((1.0 - ab).sqrt(), &eps)?;
    Ok((zi, eps))
}

pub fn forward_sample(
    sched: &DiffusionSchedule,
    z0: &Tensor,
    i: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    Ok(forward_sample_with_noise(sched, z0, i, rng)?.0)
}

/// Anything that predicts the noise in `z_i` and exposes an input VJP.
pub trait NoisePredictor {
    type Cache;

    fn latent_dim(&self) -> usize;

    fn predict_with_cache(
        &self,
        sched: &DiffusionSchedule,
        z: &Tensor,
        i: usize,
    ) -> Result<(Tensor, Self::Cache)>;

    /// Gradient of `<upstream, eps(z, i)>` with respect to `z`.
    fn vjp_latent(&self, cache: &Self::Cache, upstream: &Tensor) -> Result<Tensor>;

    fn predict(&self, sched: &DiffusionSchedule, z: &Tensor, i: usize) -> Result<Tensor> {
        Ok(self.predict_with_cache(sched, z, i)?.0)
    }
}

/// MLP over `concat(z, time_embed(i))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    net: MlpNetwork,
    embedding: TimeEmbedding,
}

impl ScoreModel {
    pub fn new(
        latent_dim: usize,
        hidden: &[usize],
        embedding: TimeEmbedding,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut dims = vec![latent_dim + embedding.dim];
        dims.extend_from_slice(hidden);
        dims.push(latent_dim);
        let net = MlpNetwork::new(&dims, Activation::Tanh, Activation::Identity, rng)?;
        Ok(Self { net, embedding })
    }

    pub fn from_parts(net: MlpNetwork, embedding: TimeEmbedding) -> Result<Self> {
        if net.input_dim() != net.output_dim() + embedding.dim {
            return Err(Error::InvalidArgument(format!(
                "score net input {} != latent {} + embedding {}",
                net.input_dim(),
                net.output_dim(),
                embedding.dim
            )));
        }
        Ok(Self { net, embedding })
    }

    pub fn net(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNetwork {
        &mut self.net
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    fn input(&self, sched: &DiffusionSchedule, z: &Tensor, i: usize) -> Result<Tensor> {
        check_len("score model latent", self.latent_dim(), z.len())?;
        Ok(z.concat(&self.embedding.embed(i, sched.len())?))
    }
}

impl NoisePredictor for ScoreModel {
    type Cache = MlpCache;

    fn latent_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn predict_with_cache(
        &self,
        sched: &DiffusionSchedule,
        z: &Tensor,
        i: usize,
    ) -> Result<(Tensor, MlpCache)> {
        let input = self.input(sched, z, i)?;
        self.net.forward(input.data())
    }

    fn vjp_latent(&self, cache: &MlpCache, upstream: &Tensor) -> Result<Tensor> {
        let g = self.net.vjp_input(cache, upstream.data())?;
        Ok(Tensor::from_vec(g.data()[..self.latent_dim()].to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreTrainConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub val_triples: usize,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            embedding_dim: 16,
            steps: 20_000,
            batch_size: 32,
            learning_rate: 1e-3,
            final_lr_fraction: 0.05,
            val_triples: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Mean batch loss over consecutive windows of `steps / 20` updates.
    pub windowed_loss: Vec<f64>,
    pub val_loss_initial: f64,
    pub val_loss_final: f64,
}

/// Fixed `(z0, i, eps)` triples for measuring the denoising loss.
pub fn denoising_triples(
    latents: &[Tensor],
    sched: &DiffusionSchedule,
    count: usize,
    rng: &mut RngStream,
) -> Result<Vec<(Tensor, usize, Tensor)>> {
    (0..count)
        .map(|_| {
            let z0 = &latents[rng.int_range(0, latents.len() - 1)];
            let i = rng.int_range(1, sched.len());
            let (zi, eps) = forward_sample_with_noise(sched, z0, i, rng)?;
            Ok((zi, i, eps))
        })
        .collect()
}

/// Mean of `|eps_theta(z_i, i) - eps|^2` over prepared triples.
pub fn denoising_loss(
    model: &impl NoisePredictor,
    sched: &DiffusionSchedule,
    triples: &[(Tensor, usize, Tensor)],
) -> Result<f64> {
    let mut total = 0.0;
    for (zi, i, eps) in triples {
        total += model.predict(sched, zi, *i)?.sub(eps)?.norm_sq();
    }
    Ok(total / triples.len().max(1) as f64)
}

/// Minimizes `E |eps_theta(z_i, i) - eps|^2` with `i ~ U[1, N]`.
pub fn train_score(
    score: &mut ScoreModel,
    train_latents: &[Tensor],
    val_latents: &[Tensor],
    sched: &DiffusionSchedule,
    config: &ScoreTrainConfig,
    rng: &RngStream,
) -> Result<ScoreReport> {
    if train_latents.is_empty() {
        return Err(Error::InvalidArgument("no training latents".into()));
    }
    let val_source = if val_latents.is_empty() { train_latents } else { val_latents };
    let triples = denoising_triples(val_source, sched, config.val_triples, &mut rng.domain("score.val", 0))?;
    let val_loss_initial = denoising_loss(score, sched, &triples)?;

    let mut adam = AdamState::new(AdamConfig::with_lr(config.learning_rate), score.net.params());
    let mut draw = rng.domain("score.train", 0);
    let batch = config.batch_size.max(1);
    let window = (config.steps / 20).max(1);
    let mut windowed_loss = Vec::new();
    let mut window_sum = 0.0;
    let mut window_count = 0;
    for step in 0..config.steps {
        let mut grads = crate::nn::MlpGrads::zeros_like(&score.net);
        let mut loss = 0.0;
        for _ in 0..batch {
            let z0 = &train_latents[draw.int_range(0, train_latents.len() - 1)];
            let i = draw.int_range(1, sched.len());
            let (zi, eps) = forward_sample_with_noise(sched, z0, i, &mut draw)?;
            let input = score.input(sched, &zi, i)?;
            let (pred, cache) = score.net.forward(input.data())?;
            let diff = pred.sub(&eps)?;
            loss += diff.norm_sq();
            let up: Vec<f64> = diff.data().iter().map(|v| 2.0 * v).collect();
            let (_, g) = score.net.vjp(&cache, &up)?;
            grads.accumulate(&g)?;
        }
        let inv = 1.0 / batch as f64;
        loss *= inv;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: "score",
                step,
                loss,
            });
        }
        grads.scale(inv);
        adam.config.learning_rate = cosine_lr(
            config.learning_rate,
            config.final_lr_fraction,
            step as f64 / config.steps.max(1) as f64,
        );
        adam.step(&mut score.net.params_mut(), &grads.tensors())?;
        window_sum += loss;
        window_count += 1;
        if window_count == window {
            windowed_loss.push(window_sum / window_count as f64);
            window_sum = 0.0;
            window_count = 0;
        }
    }
    let val_loss_final = denoising_loss(score, sched, &triples)?;
    Ok(ScoreReport {
        windowed_loss,
        val_loss_initial,
        val_loss_final,
    })
}

/// Posterior-mean estimate `(z_i - sqrt(1 - alpha_bar_i) eps_hat) / sqrt(alpha_bar_i)`.
pub fn tweedie_from_eps(sched: &DiffusionSchedule, z_i: &Tensor, eps: &Tensor, i: usize) -> Result<Tensor> {
    sched.check(i)?;
    let ab = sched.alpha_bar(i);
    let mut out = z_i.clone();
    out.axpy(-(1.0 - ab).sqrt(), eps)?;
    Ok(out.scale(1.0 / ab.sqrt()))
}

pub fn tweedie_z0(
    model: &impl NoisePredictor,
    sched: &DiffusionSchedule,
    z_i: &Tensor,
    i: usize,
) -> Result<Tensor> {
    let eps = model.predict(sched, z_i, i)?;
    tweedie_from_eps(sched, z_i, &eps, i)
}

/// Diagonal Gaussian prior `N(mean, diag(var))` over clean latents; its
/// diffused marginal has a closed-form score.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScoreOracle {
    pub mean: Tensor,
    pub var: Tensor,
}

impl GaussianScoreOracle {
    pub fn new(mean: Tensor, var: Tensor) -> Result<Self> {
        check_len("GaussianScoreOracle", mean.len(), var.len())?;
        if var.data().iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("oracle variances must be positive".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[d]),
            var: Tensor::full(&[d], 1.0),
        }
    }

    /// Per-coordinate sample mean and unbiased variance.
    pub fn fit(latents: &[Tensor]) -> Result<Self> {
        if latents.len() < 2 {
            return Err(Error::InvalidArgument("need at least two latents to fit".into()));
        }
        let d = latents[0].len();
        let n = latents.len() as f64;
        let mut mean = vec![0.0; d];
        for z in latents {
            check_len("GaussianScoreOracle::fit", d, z.len())?;
            for (m, v) in mean.iter_mut().zip(z.data()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for z in latents {
            for k in 0..d {
                var[k] += (z.data()[k] - mean[k]).powi(2) / (n - 1.0);
            }
        }
        Self::new(Tensor::from_vec(mean), Tensor::from_vec(var))
    }

    fn marginal(&self, sched: &DiffusionSchedule, i: usize) -> (f64, Vec<f64>) {
        let ab = sched.alpha_bar(i);
        let var = self.var.data().iter().map(|s| ab * s + 1.0 - ab).collect();
        (ab.sqrt(), var)
    }

    /// `grad log N(z; sqrt(ab) mu, ab Sigma + (1 - ab) I)`.
    pub fn score(&self, sched: &DiffusionSchedule, z: &Tensor, i: usize) -> Result<Tensor> {
        sched.check(i)?;
        check_len("oracle_score", self.mean.len(), z.len())?;
        let (a, var) = self.marginal(sched, i);
        Ok(Tensor::from_vec(
            z.data()
                .iter()
                .zip(self.mean.data())
                .zip(&var)
                .map(|((zk, mk), vk)| -(zk - a * mk) / vk)
                .collect(),
        ))
    }

    pub fn log_density(&self, sched: &DiffusionSchedule, z: &Tensor, i: usize) -> Result<f64> {
        sched.check(i)?;
        check_len("oracle log density", self.mean.len(), z.len())?;
        let (a, var) = self.marginal(sched, i);
        Ok(z.data()
            .iter()
            .zip(self.mean.data())
            .zip(&var)
            .map(|((zk, mk), vk)| {
                -0.5 * ((zk - a * mk).powi(2) / vk + (2.0 * std::f64::consts::PI * vk).ln())
            })
            .sum())
    }

    /// Exact posterior mean `E[z0 | z_i]` by Gaussian conditioning.
    pub fn posterior_mean(&self, sched: &DiffusionSchedule, z: &Tensor, i: usize) -> Result<Tensor> {
        sched.check(i)?;
        let ab = sched.alpha_bar(i);
        let a = ab.sqrt();
        Ok(Tensor::from_vec(
            z.data()
                .iter()
                .zip(self.mean.data())
                .zip(self.var.data())
                .map(|((zk, mk), sk)| {
                    let gain = a * sk / (ab * sk + 1.0 - ab);
                    mk + gain * (zk - a * mk)
                })
                .collect(),
        ))
    }
}

pub fn oracle_score(
    oracle: &GaussianScoreOracle,
    sched: &DiffusionSchedule,
    z_i: &Tensor,
    i: usize,
) -> Result<Tensor> {
    oracle.score(sched, z_i, i)
}

impl NoisePredictor for GaussianScoreOracle {
    /// Diagonal of the Jacobian of `eps` with respect to `z`.
    type Cache = Vec<f64>;

    fn latent_dim(&self) -> usize {
        self.mean.len()
    }

    fn predict_with_cache(
        &self,
        sched: &DiffusionSchedule,
        z: &Tensor,
        i: usize,
    ) -> Result<(Tensor, Vec<f64>)> {
        let score = self.score(sched, z, i)?;
        let scale = -(1.0 - sched.alpha_bar(i)).sqrt();
        let (_, var) = self.marginal(sched, i);
        let jac = var.iter().map(|v| -scale / v).collect();
        Ok((score.scale(scale), jac))
    }

    fn vjp_latent(&self, cache: &Vec<f64>, upstream: &Tensor) -> Result<Tensor> {
        check_len("oracle vjp", cache.len(), upstream.len())?;
        Ok(Tensor::from_vec(
            upstream.data().iter().zip(cache).map(|(u, j)| u * j).collect(),
        ))
    }
}
