use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Square `(2k+1) x (2k+1)` filter applied with reflect (mirror, edge not
/// repeated) boundary handling.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    half_width: usize,
    weights: Vec<f64>,
}

impl Kernel2d {
    pub fn new(half_width: usize, weights: Vec<f64>) -> Result<Self> {
        let size = 2 * half_width + 1;
        if weights.len() != size * size {
            return Err(Error::ShapeMismatch {
                context: "Kernel2d::new",
                expected: vec![size, size],
                actual: vec![weights.len()],
            });
        }
        Ok(Self { half_width, weights })
    }

    pub fn delta(half_width: usize) -> Self {
        let size = 2 * half_width + 1;
        let mut weights = vec![0.0; size * size];
        weights[half_width * size + half_width] = 1.0;
        Self { half_width, weights }
    }

    /// Isotropic Gaussian; `std == 0` yields the delta kernel.
    pub fn gaussian(half_width: usize, std: f64) -> Self {
        if std <= 0.0 {
            return Self::delta(half_width);
        }
        let size = 2 * half_width + 1;
        let k = half_width as f64;
        let profile: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - k;
                (-d * d / (2.0 * std * std)).exp()
            })
            .collect();
        let mut weights = Vec::with_capacity(size * size);
        for a in &profile {
            for b in &profile {
                weights.push(a * b);
            }
        }
        normalized(half_width, weights)
    }

    /// Straight motion path of `length` pixels through the center at `angle`
    /// radians, rasterized by bilinear splatting.
    pub fn motion(half_width: usize, length: f64, angle: f64) -> Self {
        if length <= 0.0 {
            return Self::delta(half_width);
        }
        let size = 2 * half_width + 1;
        let mut weights = vec![0.0; size * size];
        let samples = (length * 20.0).ceil() as usize + 1;
        let (dir_y, dir_x) = angle.sin_cos();
        let k = half_width as f64;
        for s in 0..samples {
            let pos = -0.5 * length + length * s as f64 / (samples - 1) as f64;
            let (py, px) = (k + pos * dir_y, k + pos * dir_x);
            let (y0, x0) = (py.floor(), px.floor());
            let (fy, fx) = (py - y0, px - x0);
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let (r, c) = (y0 + dy, x0 + dx);
                    let w = wy * wx;
                    if w > 0.0 && r >= 0.0 && c >= 0.0 && r < size as f64 && c < size as f64 {
                        weights[r as usize * size + c as usize] += w;
                    }
                }
            }
        }
        normalized(half_width, weights)
    }

    pub fn half_width(&self) -> usize {
        self.half_width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_image(&self, x: &Tensor) -> Result<(usize, usize)> {
        let &[h, w] = x.shape() else {
            return Err(Error::InvalidArgument(format!(
                "expected a 2-D image, got shape {:?}",
                x.shape()
            )));
        };
        if h <= self.half_width || w <= self.half_width {
            return Err(Error::InvalidArgument(format!(
                "image {h}x{w} too small for reflect padding of width {}",
                self.half_width
            )));
        }
        Ok((h, w))
    }

    /// `out[i, j] = sum_{u, v} K[u, v] x[reflect(i + u - k), reflect(j + v - k)]`
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_image(x)?;
        let size = 2 * self.half_width + 1;
        let k = self.half_width as isize;
        let src = x.data();
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for u in 0..size {
                    let r = reflect(i as isize + u as isize - k, h);
                    let row = &src[r * w..(r + 1) * w];
                    let krow = &self.weights[u * size..(u + 1) * size];
                    for (v, &kw) in krow.iter().enumerate() {
                        acc += kw * row[reflect(j as isize + v as isize - k, w)];
                    }
                }
                out[i * w + j] = acc;
            }
        }
        Tensor::new(vec![h, w], out)
    }

    /// Exact adjoint of [`Kernel2d::apply`] (scatter form).
    pub fn apply_adjoint(&self, g: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_image(g)?;
        let size = 2 * self.half_width + 1;
        let k = self.half_width as isize;
        let up = g.data();
        let mut out = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let gij = up[i * w + j];
                if gij == 0.0 {
                    continue;
                }
                for u in 0..size {
                    let r = reflect(i as isize + u as isize - k, h);
                    let krow = &self.weights[u * size..(u + 1) * size];
                    for (v, &kw) in krow.iter().enumerate() {
                        out[r * w + reflect(j as isize + v as isize - k, w)] += kw * gij;
                    }
                }
            }
        }
        Tensor::new(vec![h, w], out)
    }
}

fn normalized(half_width: usize, mut weights: Vec<f64>) -> Kernel2d {
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    Kernel2d { half_width, weights }
}

#[inline]
fn reflect(idx: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if idx < 0 {
        -idx
    } else if idx >= n {
        2 * (n - 1) - idx
    } else {
        idx
    };
    r as usize
}
