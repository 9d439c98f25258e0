//! Forward measurement operators `A` with exact vector-Jacobian products, and
//! the additive Gaussian measurement model `y = A(x) + n`.

mod kernel;

use serde::{Deserialize, Serialize};

pub use kernel::Kernel2d;

use crate::error::{check_shape, Error, Result};
use crate::numerics::{RngStream, Tensor};

/// A differentiable image-to-image forward map.
pub trait ForwardOperator {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;

    /// Gradient of `<upstream, A(x)>` with respect to `x`.
    fn vjp(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlurParams {
    pub half_width: usize,
    pub std: f64,
}

/// Gaussian blur with kernel size `2 * half_width + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianBlurParams", into = "GaussianBlurParams")]
pub struct GaussianBlurOp {
    params: GaussianBlurParams,
    kernel: Kernel2d,
}

impl TryFrom<GaussianBlurParams> for GaussianBlurOp {
    type Error = Error;

    fn try_from(p: GaussianBlurParams) -> Result<Self> {
        Self::new(p.half_width, p.std)
    }
}

impl From<GaussianBlurOp> for GaussianBlurParams {
    fn from(op: GaussianBlurOp) -> Self {
        op.params
    }
}

impl GaussianBlurOp {
    pub fn new(half_width: usize, std: f64) -> Result<Self> {
        if !(std >= 0.0) || !std.is_finite() {
            return Err(Error::InvalidArgument(format!("blur std must be >= 0, got {std}")));
        }
        Ok(Self {
            params: GaussianBlurParams { half_width, std },
            kernel: Kernel2d::gaussian(half_width, std),
        })
    }

    pub fn std(&self) -> f64 {
        self.params.std
    }

    pub fn half_width(&self) -> usize {
        self.params.half_width
    }

    pub fn kernel(&self) -> &Kernel2d {
        &self.kernel
    }
}

impl ForwardOperator for GaussianBlurOp {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        self.kernel.apply(x)
    }

    fn vjp(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        check_shape("GaussianBlurOp::vjp", x.shape(), upstream.shape())?;
        self.kernel.apply_adjoint(upstream)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionPath {
    pub length: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearBlurParams {
    pub half_width: usize,
    pub first: MotionPath,
    pub second: MotionPath,
    pub gamma: f64,
}

/// `A(x) = s(K2 * s(K1 * x))` with the camera-response curve
/// `s(u) = 0.5 + 0.5 tanh(gamma (u - 0.5))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NonlinearBlurParams", into = "NonlinearBlurParams")]
pub struct NonlinearBlurOp {
    params: NonlinearBlurParams,
    first: Kernel2d,
    second: Kernel2d,
}

pub const DEFAULT_RESPONSE_GAMMA: f64 = 2.5;

impl TryFrom<NonlinearBlurParams> for NonlinearBlurOp {
    type Error = Error;

    fn try_from(p: NonlinearBlurParams) -> Result<Self> {
        Self::new(p.half_width, p.first, p.second, p.gamma)
    }
}

impl From<NonlinearBlurOp> for NonlinearBlurParams {
    fn from(op: NonlinearBlurOp) -> Self {
        op.params
    }
}

impl NonlinearBlurOp {
    pub fn new(half_width: usize, first: MotionPath, second: MotionPath, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
        }
        for p in [first, second] {
            if !(p.length >= 0.0) || p.length > 2.0 * half_width as f64 - 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "motion length {} does not fit a kernel of half-width {half_width}",
                    p.length
                )));
            }
        }
        Ok(Self {
            params: NonlinearBlurParams {
                half_width,
                first,
                second,
                gamma,
            },
            first: Kernel2d::motion(half_width, first.length, first.angle),
            second: Kernel2d::motion(half_width, second.length, second.angle),
        })
    }

    pub fn params(&self) -> &NonlinearBlurParams {
        &self.params
    }

    pub fn response(&self, u: f64) -> f64 {
        0.5 + 0.5 * (self.params.gamma * (u - 0.5)).tanh()
    }

    fn response_derivative(&self, u: f64) -> f64 {
        let th = (self.params.gamma * (u - 0.5)).tanh();
        0.5 * self.params.gamma * (1.0 - th * th)
    }
}

impl ForwardOperator for NonlinearBlurOp {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let a1 = self.first.apply(x)?.map(|u| self.response(u));
        Ok(self.second.apply(&a1)?.map(|u| self.response(u)))
    }

    fn vjp(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        check_shape("NonlinearBlurOp::vjp", x.shape(), upstream.shape())?;
        let u1 = self.first.apply(x)?;
        let a1 = u1.map(|u| self.response(u));
        let u2 = self.second.apply(&a1)?;
        let g2 = upstream.zip_map(&u2, |g, u| g * self.response_derivative(u))?;
        let g_a1 = self.second.apply_adjoint(&g2)?;
        let g1 = g_a1.zip_map(&u1, |g, u| g * self.response_derivative(u))?;
        self.first.apply_adjoint(&g1)
    }
}

/// Concrete operator instance, serializable into experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    GaussianBlur(GaussianBlurOp),
    NonlinearBlur(NonlinearBlurOp),
}

impl ForwardOperator for Degradation {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Degradation::GaussianBlur(op) => op.apply(x),
            Degradation::NonlinearBlur(op) => op.apply(x),
        }
    }

    fn vjp(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        match self {
            Degradation::GaussianBlur(op) => op.vjp(x, upstream),
            Degradation::NonlinearBlur(op) => op.vjp(x, upstream),
        }
    }
}

/// Identity map; used as a linear-Gaussian sanity operator.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityOp;

impl ForwardOperator for IdentityOp {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.clone())
    }

    fn vjp(&self, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        check_shape("IdentityOp::vjp", x.shape(), upstream.shape())?;
        Ok(upstream.clone())
    }
}

/// Parameterized family of operators indexed by a corruption level `t in [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DegradationFamily {
    /// Blur std `t * max_std`.
    GaussianBlur { half_width: usize, max_std: f64 },
    /// Both motion paths of length `t * max_length` at independent random angles.
    NonlinearBlur {
        half_width: usize,
        max_length: f64,
        gamma: f64,
    },
}

impl DegradationFamily {
    pub fn default_gaussian() -> Self {
        DegradationFamily::GaussianBlur {
            half_width: 3,
            max_std: 1.5,
        }
    }

    pub fn default_nonlinear() -> Self {
        DegradationFamily::NonlinearBlur {
            half_width: 3,
            max_length: 5.0,
            gamma: DEFAULT_RESPONSE_GAMMA,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            DegradationFamily::GaussianBlur { .. } => "gaussian",
            DegradationFamily::NonlinearBlur { .. } => "nonlinear",
        }
    }

    /// Operator at level `t`. Only the nonlinear family consumes randomness.
    pub fn operator(&self, t: f64, rng: &mut RngStream) -> Result<Degradation> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidArgument(format!("corruption level {t} outside [0, 1]")));
        }
        match *self {
            DegradationFamily::GaussianBlur { half_width, max_std } => Ok(
                Degradation::GaussianBlur(GaussianBlurOp::new(half_width, t * max_std)?),
            ),
            DegradationFamily::NonlinearBlur {
                half_width,
                max_length,
                gamma,
            } => {
                let length = t * max_length;
                let first = MotionPath {
                    length,
                    angle: rng.uniform_range(0.0, std::f64::consts::PI),
                };
                let second = MotionPath {
                    length,
                    angle: rng.uniform_range(0.0, std::f64::consts::PI),
                };
                Ok(Degradation::NonlinearBlur(NonlinearBlurOp::new(
                    half_width, first, second, gamma,
                )?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementModel<Op = Degradation> {
    pub operator: Op,
    pub noise_std: f64,
}

pub const DEFAULT_NOISE_STD: f64 = 0.05;

impl<Op: ForwardOperator> MeasurementModel<Op> {
    pub fn new(operator: Op, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {noise_std}")));
        }
        Ok(Self { operator, noise_std })
    }

    /// `A(x) + noise_std * eps`. Noise is drawn even when `noise_std == 0`
    /// so the stream position does not depend on the noise level.
    pub fn measure(&self, x: &Tensor, rng: &mut RngStream) -> Result<Tensor> {
        let clean = self.operator.apply(x)?;
        let noise = rng.gaussian(clean.shape());
        let mut y = clean;
        if self.noise_std > 0.0 {
            y.axpy(self.noise_std, &noise)?;
        }
        Ok(y)
    }
}

pub fn apply(op: &impl ForwardOperator, x: &Tensor) -> Result<Tensor> {
    op.apply(x)
}

pub fn vjp(op: &impl ForwardOperator, x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    op.vjp(x, upstream)
}

pub fn measure<Op: ForwardOperator>(
    model: &MeasurementModel<Op>,
    x: &Tensor,
    rng: &mut RngStream,
) -> Result<Tensor> {
    model.measure(x, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;

    fn random_image(rng: &mut RngStream) -> Tensor {
        Tensor::new(vec![16, 16], (0..256).map(|_| rng.uniform()).collect()).unwrap()
    }

    #[test]
    fn zero_std_blur_is_identity() {
        let mut rng = RngStream::new(1, 0);
        let x = random_image(&mut rng);
        let op = GaussianBlurOp::new(3, 0.0).unwrap();
        assert_eq!(op.apply(&x).unwrap(), x);
        let u = rng.gaussian(&[16, 16]);
        assert_eq!(op.vjp(&x, &u).unwrap(), u);
    }

    #[test]
    fn constant_images_are_preserved() {
        let x = Tensor::full(&[16, 16], 0.37);
        let mut rng = RngStream::new(2, 0);
        for t in [0.0, 0.3, 1.0] {
            for fam in [DegradationFamily::default_gaussian(), DegradationFamily::default_nonlinear()] {
                if let Degradation::GaussianBlur(op) = fam.operator(t, &mut rng).unwrap() {
                    let y = op.apply(&x).unwrap();
                    assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
                }
            }
            let k = Kernel2d::motion(3, 5.0 * t, 0.9);
            let y = k.apply(&x).unwrap();
            assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn nonlinear_blur_of_zero_image() {
        let op = NonlinearBlurOp::new(
            3,
            MotionPath { length: 4.0, angle: 0.2 },
            MotionPath { length: 2.0, angle: 1.7 },
            2.5,
        )
        .unwrap();
        let y = op.apply(&Tensor::zeros(&[16, 16])).unwrap();
        // s(0) = 0.5 + 0.5 tanh(-1.25); s(s(0)) evaluated directly
        let s0 = 0.5 + 0.5 * (-1.25f64).tanh();
        let ss0 = 0.5 + 0.5 * (2.5 * (s0 - 0.5)).tanh();
        assert!((s0 - 0.0758582).abs() < 1e-6);
        assert!((ss0 - 0.1071002).abs() < 1e-6);
        assert!(y.data().iter().all(|v| (v - ss0).abs() < 1e-12));
    }

    #[test]
    fn response_is_monotone_into_unit_interval() {
        let op = NonlinearBlurOp::new(
            3,
            MotionPath { length: 0.0, angle: 0.0 },
            MotionPath { length: 0.0, angle: 0.0 },
            2.5,
        )
        .unwrap();
        let mut prev = -1.0;
        for k in 0..=100 {
            let s = op.response(k as f64 / 100.0);
            assert!((0.0..=1.0).contains(&s));
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn gaussian_blur_adjoint_identity() {
        let mut rng = RngStream::new(3, 0);
        for _ in 0..20 {
            let std = rng.uniform_range(0.0, 1.5);
            let op = GaussianBlurOp::new(3, std).unwrap();
            let x = rng.gaussian(&[16, 16]);
            let u = rng.gaussian(&[16, 16]);
            let lhs = op.apply(&x).unwrap().dot(&u).unwrap();
            let rhs = x.dot(&op.vjp(&x, &u).unwrap()).unwrap();
            assert!((lhs - rhs).abs() / lhs.abs().max(1e-300) < 1e-10);
        }
    }

    #[test]
    fn gaussian_blur_is_linear() {
        let mut rng = RngStream::new(4, 0);
        let op = GaussianBlurOp::new(3, 1.2).unwrap();
        let x = rng.gaussian(&[16, 16]);
        let z = rng.gaussian(&[16, 16]);
        let (a, b) = (0.7, -2.3);
        let mut combo = x.scale(a);
        combo.axpy(b, &z).unwrap();
        let lhs = op.apply(&combo).unwrap();
        let mut rhs = op.apply(&x).unwrap().scale(a);
        rhs.axpy(b, &op.apply(&z).unwrap()).unwrap();
        let diff = lhs.sub(&rhs).unwrap().norm();
        assert!(diff < 1e-12, "diff {diff}");
    }

    #[test]
    fn nonlinear_vjp_matches_finite_differences() {
        let mut rng = RngStream::new(5, 0);
        let fam = DegradationFamily::default_nonlinear();
        for _ in 0..20 {
            let t = rng.uniform();
            let op = fam.operator(t, &mut rng).unwrap();
            let x = random_image(&mut rng);
            let u = rng.gaussian(&[16, 16]);
            let g = op.vjp(&x, &u).unwrap();
            let err =
                finite_diff_check(|p| op.apply(p).unwrap().dot(&u).unwrap(), &x, &g, 1e-5).unwrap();
            assert!(err < 1e-5, "err {err}");
        }
    }

    #[test]
    fn blur_distance_grows_with_std() {
        let mut rng = RngStream::new(6, 0);
        for _ in 0..10 {
            let x = random_image(&mut rng);
            let mut prev = 0.0;
            for step in 0..=15 {
                let op = GaussianBlurOp::new(3, step as f64 * 0.1).unwrap();
                let d = x.sub(&op.apply(&x).unwrap()).unwrap().norm();
                assert!(d + 1e-12 >= prev, "distance dropped at std {}", step as f64 * 0.1);
                prev = d;
            }
        }
    }

    #[test]
    fn measurement_noise() {
        let mut rng = RngStream::new(7, 0);
        let x = random_image(&mut rng);
        let op = GaussianBlurOp::new(3, 0.8).unwrap();
        let clean = MeasurementModel::new(op.clone(), 0.0).unwrap();
        assert_eq!(clean.measure(&x, &mut rng).unwrap(), op.apply(&x).unwrap());

        // zero operator output: y is pure noise
        let zeros = Tensor::zeros(&[100, 100]);
        let noisy = MeasurementModel::new(IdentityOp, 0.05).unwrap();
        let y = noisy.measure(&zeros, &mut rng).unwrap();
        let mean = y.mean();
        let sd = (y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (y.len() as f64 - 1.0)).sqrt();
        assert!((sd - 0.05).abs() < 0.05 * 0.05, "sd {sd}");

        let r1 = noisy.measure(&x, &mut RngStream::new(9, 9)).unwrap();
        let r2 = noisy.measure(&x, &mut RngStream::new(9, 9)).unwrap();
        assert_eq!(r1, r2);
        assert!(MeasurementModel::new(IdentityOp, -0.1).is_err());
    }

    #[test]
    fn vjp_shape_mismatch_errors() {
        let op = GaussianBlurOp::new(3, 1.0).unwrap();
        assert!(op.vjp(&Tensor::zeros(&[16, 16]), &Tensor::zeros(&[8, 8])).is_err());
    }
}
