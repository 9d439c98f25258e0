//! Procedural toy image corpus with a controllable texture difficulty `tau`,
//! and corruption at an explicit level `t`.

use serde::{Deserialize, Serialize};

use crate::degradations::{Degradation, DegradationFamily, MeasurementModel};
use crate::error::{Error, Result};
use crate::numerics::{RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyImageSpec {
    pub size: usize,
    pub max_components: usize,
    /// Highest sinusoid frequency, in cycles per image, along each axis.
    pub max_frequency: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub patch_size: usize,
    /// Side of one checkerboard square, in pixels.
    pub checker_size: usize,
    /// Patch corners are drawn from multiples of this stride.
    pub patch_stride: usize,
    /// Probability that an image carries a texture patch at all.
    pub textured_fraction: f64,
}

impl Default for ToyImageSpec {
    fn default() -> Self {
        Self {
            size: 16,
            max_components: 3,
            max_frequency: 1,
            tau_min: 0.3,
            tau_max: 0.5,
            patch_size: 8,
            checker_size: 2,
            patch_stride: 8,
            textured_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub split: Split,
    pub tau: f64,
    /// Corruption level assigned at generation time (validation and test only;
    /// training draws a fresh level every epoch).
    pub t: Option<f64>,
    pub image: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: ToyImageSpec,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Image with a given texture amplitude. The smooth part is a sum of up to
/// `max_components` low-frequency sinusoids; the texture is a checkerboard of
/// `checker_size` squares with amplitude `+-tau/2`, on a `patch_size` square
/// whose corner is a random multiple of `patch_stride`.
pub fn generate_image(spec: &ToyImageSpec, tau: f64, rng: &mut RngStream) -> Tensor {
    let n = spec.size;
    let mut img = vec![rng.uniform_range(0.4, 0.6); n * n];
    let components = rng.int_range(1, spec.max_components.max(1));
    let mut waves = Vec::with_capacity(components);
    for _ in 0..components {
        let (fx, fy) = loop {
            let fx = rng.int_range(0, spec.max_frequency) as f64;
            let fy = rng.int_range(0, spec.max_frequency) as f64;
            if fx + fy > 0.0 {
                break (fx, fy);
            }
        };
        let phase = rng.uniform_range(0.0, 2.0 * std::f64::consts::PI);
        let amp = rng.uniform_range(0.05, 0.25);
        waves.push((fx, fy, phase, amp));
    }
    let total: f64 = waves.iter().map(|w| w.3).sum();
    let shrink = if total > 0.3 { 0.3 / total } else { 1.0 };
    let step = 2.0 * std::f64::consts::PI / n as f64;
    for (fx, fy, phase, amp) in waves {
        for i in 0..n {
            for j in 0..n {
                img[i * n + j] +=
                    shrink * amp * (step * (fx * j as f64 + fy * i as f64) + phase).sin();
            }
        }
    }
    let p = spec.patch_size.min(n);
    let stride = spec.patch_stride.max(1);
    let slots = (n - p) / stride;
    let r0 = stride * rng.int_range(0, slots);
    let c0 = stride * rng.int_range(0, slots);
    let q = spec.checker_size.max(1);
    if tau > 0.0 {
        for i in r0..r0 + p {
            for j in c0..c0 + p {
                let sign = if (i / q + j / q).is_multiple_of(2) { 0.5 } else { -0.5 };
                img[i * n + j] += tau * sign;
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(vec![n, n], img).expect("sized")
}

/// Texture amplitude for one image: zero with probability `1 - textured_fraction`,
/// otherwise uniform on `(tau_min, tau_max]`.
pub fn sample_tau(spec: &ToyImageSpec, rng: &mut RngStream) -> f64 {
    let textured = rng.uniform() < spec.textured_fraction;
    let amplitude = spec.tau_min + (spec.tau_max - spec.tau_min) * (1.0 - rng.uniform());
    if textured {
        amplitude
    } else {
        0.0
    }
}

pub fn generate_corpus(
    spec: &ToyImageSpec,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("split sizes must be positive".into()));
    }
    if spec.patch_size > spec.size || spec.size < 4 {
        return Err(Error::InvalidArgument("patch does not fit the image".into()));
    }
    let root = RngStream::new(seed, 0);
    let make = |id: usize, split: Split| {
        let mut rng = root.domain("corpus.image", id as u64);
        let tau = sample_tau(spec, &mut rng);
        let image = generate_image(spec, tau, &mut rng);
        let t = match split {
            Split::Train => None,
            _ => Some(root.domain("corpus.level", id as u64).uniform()),
        };
        Sample {
            id,
            split,
            tau,
            t,
            image,
        }
    };
    let train = (0..n_train).map(|id| make(id, Split::Train)).collect();
    let val = (n_train..n_train + n_val).map(|id| make(id, Split::Val)).collect();
    let test = (n_train + n_val..n_train + n_val + n_test)
        .map(|id| make(id, Split::Test))
        .collect();
    Ok(Corpus {
        spec: *spec,
        seed,
        train,
        val,
        test,
    })
}

/// A corrupted observation together with the level and operator that produced it.
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub y: Tensor,
    pub t: f64,
    pub operator: Degradation,
}

/// `y = A_t(x) + noise_std * eps` with the operator drawn from `family` at level `t`.
pub fn corrupt(
    x: &Tensor,
    t: f64,
    family: &DegradationFamily,
    noise_std: f64,
    rng: &mut RngStream,
) -> Result<Corrupted> {
    let operator = family.operator(t, rng)?;
    let model = MeasurementModel::new(operator, noise_std)?;
    let y = model.measure(x, rng)?;
    Ok(Corrupted {
        y,
        t,
        operator: model.operator,
    })
}

/// Largest absolute finite difference between neighbouring pixels.
pub fn max_gradient(img: &Tensor) -> f64 {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let d = img.data();
    let mut best = 0.0f64;
    for i in 0..h {
        for j in 0..w {
            if j + 1 < w {
                best = best.max((d[i * w + j + 1] - d[i * w + j]).abs());
            }
            if i + 1 < h {
                best = best.max((d[(i + 1) * w + j] - d[i * w + j]).abs());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradations::ForwardOperator;

    #[test]
    fn same_seed_same_corpus() {
        let spec = ToyImageSpec::default();
        let a = generate_corpus(&spec, 20, 5, 5, 77).unwrap();
        let b = generate_corpus(&spec, 20, 5, 5, 77).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&spec, 20, 5, 5, 78).unwrap();
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    #[test]
    fn split_sizes_and_metadata() {
        let corpus = generate_corpus(&ToyImageSpec::default(), 30, 10, 200, 1).unwrap();
        assert_eq!(corpus.test.len(), 200);
        assert!(corpus.test.iter().all(|s| s.t.is_some() && s.split == Split::Test));
        assert!(corpus.train.iter().all(|s| s.t.is_none()));
        let ids: std::collections::BTreeSet<usize> = corpus.iter().map(|s| s.id).collect();
        assert_eq!(ids.len(), 240);
    }

    #[test]
    fn pixels_in_unit_interval() {
        let spec = ToyImageSpec::default();
        let corpus = generate_corpus(&spec, 200, 10, 10, 3).unwrap();
        for s in corpus.iter() {
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(s.tau > spec.tau_min && s.tau <= spec.tau_max, "tau {}", s.tau);
        }
        let mixed = ToyImageSpec {
            textured_fraction: 0.5,
            tau_min: 0.0,
            ..spec
        };
        let corpus = generate_corpus(&mixed, 200, 10, 10, 3).unwrap();
        let textured = corpus.train.iter().filter(|s| s.tau > 0.0).count();
        assert!(textured > 60 && textured < 140, "textured {textured}");
    }

    #[test]
    fn smooth_images_have_smaller_gradients_than_textured() {
        let spec = ToyImageSpec::default();
        let root = RngStream::new(9, 0);
        let smooth: Vec<f64> = (0..200)
            .map(|k| max_gradient(&generate_image(&spec, 0.0, &mut root.substream(k))))
            .collect();
        let mut textured: Vec<f64> = (0..200)
            .map(|k| max_gradient(&generate_image(&spec, spec.tau_max, &mut root.substream(1000 + k))))
            .collect();
        textured.sort_by(f64::total_cmp);
        let median = 0.5 * (textured[99] + textured[100]);
        let worst_smooth = smooth.iter().copied().fold(0.0, f64::max);
        assert!(worst_smooth < median, "smooth max {worst_smooth} vs textured median {median}");
    }

    #[test]
    fn zero_level_without_noise_is_identity() {
        let corpus = generate_corpus(&ToyImageSpec::default(), 2, 1, 1, 4).unwrap();
        let x = &corpus.train[0].image;
        let fam = DegradationFamily::default_gaussian();
        let c = corrupt(x, 0.0, &fam, 0.0, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(&c.y, x);
    }

    #[test]
    fn full_level_uses_max_std() {
        let fam = DegradationFamily::default_gaussian();
        let x = Tensor::zeros(&[16, 16]);
        let c = corrupt(&x, 1.0, &fam, 0.05, &mut RngStream::new(0, 0)).unwrap();
        match c.operator {
            Degradation::GaussianBlur(op) => assert_eq!(op.std(), 1.5),
            _ => panic!("wrong family"),
        }
        assert!(corrupt(&x, 1.5, &fam, 0.05, &mut RngStream::new(0, 0)).is_err());
    }

    fn patch_contrast(img: &Tensor, r0: usize, c0: usize, p: usize) -> f64 {
        let w = img.shape()[1];
        let vals: Vec<f64> = (r0..r0 + p)
            .flat_map(|i| (c0..c0 + p).map(move |j| (i, j)))
            .map(|(i, j)| img.data()[i * w + j])
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt()
    }

    #[test]
    fn half_level_lowers_patch_contrast() {
        let mut data = vec![0.5; 256];
        for i in 4..12 {
            for j in 4..12 {
                data[i * 16 + j] += if (i + j) % 2 == 0 { 0.25 } else { -0.25 };
            }
        }
        let x = Tensor::new(vec![16, 16], data).unwrap();
        let fam = DegradationFamily::default_gaussian();
        let y0 = corrupt(&x, 0.0, &fam, 0.0, &mut RngStream::new(0, 0)).unwrap().y;
        let y5 = corrupt(&x, 0.5, &fam, 0.0, &mut RngStream::new(0, 0)).unwrap().y;
        assert!(patch_contrast(&y5, 4, 4, 8) < patch_contrast(&y0, 4, 4, 8));
    }

    #[test]
    fn distortion_nondecreasing_in_level() {
        let corpus = generate_corpus(&ToyImageSpec::default(), 50, 1, 1, 5).unwrap();
        let fam = DegradationFamily::default_gaussian();
        for s in &corpus.train {
            let mut prev = 0.0;
            for k in 0..=10 {
                let op = fam.operator(k as f64 / 10.0, &mut RngStream::new(0, 0)).unwrap();
                let d = s.image.sub(&op.apply(&s.image).unwrap()).unwrap().norm();
                assert!(d + 1e-12 >= prev);
                prev = d;
            }
        }
    }
}
