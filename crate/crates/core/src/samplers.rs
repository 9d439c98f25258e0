//! Reverse diffusion: ancestral steps, residual-normalized guidance,
//! severity-driven start times and the fixed-start baseline.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::degradations::{DegradationFamily, ForwardOperator};
use crate::error::{check_len, Error, Result};
use crate::latent_diffusion::{forward_sample, tweedie_from_eps, DiffusionSchedule, NoisePredictor};
use crate::numerics::{RngStream, Tensor};
use crate::severity::SeverityEncoder;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub eta: f64,
    pub noise_correction: f64,
    pub through_score: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            eta: 1.5,
            noise_correction: 1.2,
            through_score: true,
        }
    }
}

impl GuidanceConfig {
    pub fn for_family(family: &DegradationFamily) -> Self {
        Self {
            noise_correction: default_noise_correction(family),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::InvalidArgument(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if !(self.noise_correction.is_finite() && self.noise_correction >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise correction must be finite and >= 0, got {}",
                self.noise_correction
            )));
        }
        Ok(())
    }
}

pub fn default_noise_correction(family: &DegradationFamily) -> f64 {
    match family {
        DegradationFamily::GaussianBlur { .. } => 1.2,
        DegradationFamily::NonlinearBlur { .. } => 1.1,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub reconstruction: Tensor,
    pub latent: Tensor,
    pub i_start: usize,
    pub steps_executed: usize,
    /// `|A(D(z0_hat(z_i))) - y|` before each guided step.
    pub residual_trace: Vec<f64>,
    /// `|A(x_hat) - y|` of the returned reconstruction.
    pub residual: f64,
    pub duration: Duration,
}

/// Raised when `c * v_hat` exceeds one and the start latent becomes pure noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampWarning {
    pub requested: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlashResult {
    pub solve: SolveResult,
    pub z_hat: Tensor,
    pub v_hat: f64,
    pub warning: Option<ClampWarning>,
}

/// `s = -eps / sqrt(1 - alpha_bar_i)`.
pub fn eps_to_score(sched: &DiffusionSchedule, eps: &Tensor, i: usize) -> Tensor {
    eps.scale(-1.0 / (1.0 - sched.alpha_bar(i)).sqrt())
}

/// One reverse update given a noise prediction at `z_i`.
pub fn ancestral_update(
    sched: &DiffusionSchedule,
    z: &Tensor,
    eps: &Tensor,
    i: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    if i == 0 || i > sched.len() {
        return Err(Error::InvalidArgument(format!("ancestral step index {i} outside 1..={}", sched.len())));
    }
    let alpha = sched.alpha(i);
    let score = eps_to_score(sched, eps, i);
    let mut next = z.clone();
    next.axpy(1.0 - alpha, &score)?;
    let mut next = next.scale(1.0 / alpha.sqrt());
    if i > 1 {
        let noise = rng.gaussian(z.shape());
        next.axpy((1.0 - alpha).sqrt(), &noise)?;
    }
    Ok(next)
}

pub fn ancestral_step(
    score: &impl NoisePredictor,
    sched: &DiffusionSchedule,
    z: &Tensor,
    i: usize,
    rng: &mut RngStream,
) -> Result<Tensor> {
    let eps = score.predict(sched, z, i)?;
    ancestral_update(sched, z, &eps, i, rng)
}

/// Index whose SNR `alpha_bar / (1 - alpha_bar)` is closest to `1 / v_hat`;
/// ties go to the smaller index and `v_hat == 0` yields 0.
pub fn snr_match(sched: &DiffusionSchedule, v_hat: f64) -> Result<usize> {
    if !v_hat.is_finite() && v_hat != f64::INFINITY {
        return Err(Error::NonFinite {
            context: format!("severity estimate {v_hat}"),
        });
    }
    if v_hat < 0.0 {
        return Err(Error::InvalidArgument(format!("severity estimate must be >= 0, got {v_hat}")));
    }
    if v_hat == 0.0 {
        return Ok(0);
    }
    let target = 1.0 / v_hat;
    let mut best = 1;
    let mut best_gap = f64::INFINITY;
    for i in 1..=sched.len() {
        let gap = (sched.snr(i) - target).abs();
        if gap < best_gap {
            best = i;
            best_gap = gap;
        }
    }
    Ok(best)
}

/// `sqrt(1 - c v) z_hat + sqrt(c v) eps` with `c v` clamped to `[0, 1]`.
pub fn noise_correct(
    z_hat: &Tensor,
    v_hat: f64,
    c: f64,
    rng: &mut RngStream,
) -> Result<(Tensor, Option<ClampWarning>)> {
    let requested = c * v_hat;
    if !requested.is_finite() {
        return Err(Error::NonFinite {
            context: format!("noise correction c * v_hat = {requested}"),
        });
    }
    let (mix, warning) = if requested > 1.0 {
        (1.0, Some(ClampWarning { requested }))
    } else {
        (requested.max(0.0), None)
    };
    let eps = rng.gaussian(z_hat.shape());
    let mut z = z_hat.scale((1.0 - mix).sqrt());
    z.axpy(mix.sqrt(), &eps)?;
    Ok((z, warning))
}

/// `eta / r`; zero when the residual vanishes.
pub fn guidance_step_size(eta: f64, residual: f64) -> f64 {
    if residual > 0.0 {
        eta / residual
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdpsGrad {
    /// Gradient of `|A(D(z0_hat(z_i))) - y|^2` with respect to `z_i`.
    pub grad: Tensor,
    pub residual: f64,
}

impl LdpsGrad {
    /// Approximate likelihood score `-grad / (2 sigma_y^2)`.
    pub fn likelihood_score(&self, sigma_y: f64) -> Tensor {
        self.grad.scale(-1.0 / (2.0 * sigma_y * sigma_y))
    }
}

struct StepTerms<C> {
    eps: Tensor,
    eps_cache: C,
    x: Tensor,
    decode_cache: crate::nn::MlpCache,
    r: Tensor,
    residual: f64,
}

fn step_terms<S: NoisePredictor>(
    score: &S,
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    sched: &DiffusionSchedule,
    z: &Tensor,
    i: usize,
    y: &Tensor,
) -> Result<StepTerms<S::Cache>> {
    let (eps, eps_cache) = score.predict_with_cache(sched, z, i)?;
    let z0 = tweedie_from_eps(sched, z, &eps, i)?;
    let (x, decode_cache) = ae.decode_with_cache(&z0)?;
    let r = op.apply(&x)?.sub(y)?;
    let residual = r.norm();
    if !residual.is_finite() {
        return Err(Error::GuidanceNonFinite { step: i });
    }
    Ok(StepTerms {
        eps,
        eps_cache,
        x,
        decode_cache,
        r,
        residual,
    })
}

fn step_gradient<S: NoisePredictor>(
    score: &S,
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    sched: &DiffusionSchedule,
    terms: &StepTerms<S::Cache>,
    i: usize,
    through_score: bool,
) -> Result<Tensor> {
    let ab = sched.alpha_bar(i);
    let gx = op.vjp(&terms.x, &terms.r.scale(2.0))?;
    let gz0 = ae.decode_vjp(&terms.decode_cache, &gx)?;
    let mut grad = gz0.scale(1.0 / ab.sqrt());
    if through_score {
        let through = score.vjp_latent(&terms.eps_cache, &gz0)?;
        grad.axpy(-((1.0 - ab) / ab).sqrt(), &through)?;
    }
    if !grad.is_finite() {
        return Err(Error::GuidanceNonFinite { step: i });
    }
    Ok(grad)
}

#[allow(clippy::too_many_arguments)]
pub fn ldps_grad(
    score: &impl NoisePredictor,
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    sched: &DiffusionSchedule,
    z: &Tensor,
    i: usize,
    y: &Tensor,
    through_score: bool,
) -> Result<LdpsGrad> {
    let terms = step_terms(score, ae, op, sched, z, i, y)?;
    let grad = step_gradient(score, ae, op, sched, &terms, i, through_score)?;
    Ok(LdpsGrad {
        grad,
        residual: terms.residual,
    })
}

fn finish(
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    y: &Tensor,
    latent: Tensor,
    i_start: usize,
    residual_trace: Vec<f64>,
    started: Instant,
) -> Result<SolveResult> {
    let reconstruction = ae.decode(&latent)?;
    let residual = op.apply(&reconstruction)?.sub(y)?.norm();
    if !residual.is_finite() {
        return Err(Error::NonFinite {
            context: "final reconstruction residual".into(),
        });
    }
    Ok(SolveResult {
        reconstruction,
        latent,
        i_start,
        steps_executed: residual_trace.len(),
        residual_trace,
        residual,
        duration: started.elapsed(),
    })
}

/// Runs `i = i_start, ..., 1`: ancestral update, then a step of size
/// `eta / r` against the gradient of the squared residual at `z_i`.
#[allow(clippy::too_many_arguments)]
pub fn guided_reverse(
    score: &impl NoisePredictor,
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    sched: &DiffusionSchedule,
    z_start: &Tensor,
    i_start: usize,
    y: &Tensor,
    cfg: &GuidanceConfig,
    rng: &mut RngStream,
) -> Result<SolveResult> {
    let started = Instant::now();
    cfg.validate()?;
    if i_start > sched.len() {
        return Err(Error::InvalidArgument(format!("start index {i_start} exceeds {}", sched.len())));
    }
    check_len("guided_reverse latent", ae.latent_dim(), z_start.len())?;
    let mut z = z_start.clone();
    let mut trace = Vec::with_capacity(i_start);
    for i in (1..=i_start).rev() {
        let terms = step_terms(score, ae, op, sched, &z, i, y)?;
        trace.push(terms.residual);
        let mut next = ancestral_update(sched, &z, &terms.eps, i, rng)?;
        let size = guidance_step_size(cfg.eta, terms.residual);
        if size > 0.0 {
            let grad = step_gradient(score, ae, op, sched, &terms, i, cfg.through_score)?;
            next.axpy(-size, &grad)?;
        }
        if !next.is_finite() {
            return Err(Error::GuidanceNonFinite { step: i });
        }
        z = next;
    }
    finish(ae, op, y, z, i_start, trace, started)
}

/// Severity encoding, SNR-matched start, noise correction, guided reverse.
#[allow(clippy::too_many_arguments)]
pub fn flash_solve(
    se: &SeverityEncoder,
    score: &impl NoisePredictor,
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    sched: &DiffusionSchedule,
    y: &Tensor,
    cfg: &GuidanceConfig,
    rng: &mut RngStream,
) -> Result<FlashResult> {
    let started = Instant::now();
    let out = se.forward(y)?;
    let i_start = snr_match(sched, out.v_hat)?;
    let (z_start, warning) = if i_start == 0 {
        (out.z_hat.clone(), None)
    } else {
        noise_correct(&out.z_hat, out.v_hat, cfg.noise_correction, rng)?
    };
    let mut solve = guided_reverse(score, ae, op, sched, &z_start, i_start, y, cfg, rng)?;
    solve.duration = started.elapsed();
    Ok(FlashResult {
        solve,
        z_hat: out.z_hat,
        v_hat: out.v_hat,
        warning,
    })
}

/// `z_k = sqrt(alpha_bar_k) z_init + sqrt(1 - alpha_bar_k) eps`.
pub fn ccdf_init(sched: &DiffusionSchedule, z_init: &Tensor, k: usize, rng: &mut RngStream) -> Result<Tensor> {
    forward_sample(sched, z_init, k, rng)
}

/// Fixed `k`-step guided reverse from a forward-diffused initial latent.
#[allow(clippy::too_many_arguments)]
pub fn ccdf_solve(
    score: &impl NoisePredictor,
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    sched: &DiffusionSchedule,
    z_init: &Tensor,
    k: usize,
    y: &Tensor,
    cfg: &GuidanceConfig,
    rng: &mut RngStream,
) -> Result<SolveResult> {
    let started = Instant::now();
    let z_k = ccdf_init(sched, z_init, k, rng)?;
    let mut solve = guided_reverse(score, ae, op, sched, &z_k, k, y, cfg, rng)?;
    solve.duration = started.elapsed();
    Ok(solve)
}

/// One-shot `D(z_hat)` from the severity encoder; no diffusion.
pub fn ae_solve(
    se: &SeverityEncoder,
    ae: &Autoencoder,
    op: &impl ForwardOperator,
    y: &Tensor,
) -> Result<(SolveResult, f64)> {
    let started = Instant::now();
    let out = se.forward(y)?;
    Ok((finish(ae, op, y, out.z_hat, 0, Vec::new(), started)?, out.v_hat))
}
