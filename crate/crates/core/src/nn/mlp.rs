use serde::{Deserialize, Serialize};

use crate::error::{check_len, check_shape, Error, Result};
use crate::numerics::{axpy, dot, RngStream, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

/// Affine layer followed by an elementwise activation. `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layers: Vec<Layer>,
}

/// Activations recorded by [`MlpNetwork::forward`]; `values[0]` is the input,
/// `values[l + 1]` the post-activation output of layer `l`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    values: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("cache holds at least the input")
    }
}

/// Parameter gradients in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<(Tensor, Tensor)>,
}

impl MlpGrads {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Tensor::zeros(l.weight.shape()), Tensor::zeros(l.bias.shape())))
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) -> Result<()> {
        check_len("MlpGrads::accumulate", self.layers.len(), other.layers.len())?;
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.axpy(1.0, ow)?;
            b.axpy(1.0, ob)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.data_mut().iter_mut().for_each(|v| *v *= s);
            b.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn flatten(&self) -> Tensor {
        Tensor::from_vec(
            self.tensors()
                .into_iter()
                .flat_map(|t| t.data().iter().copied())
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

impl MlpNetwork {
    /// Builds a network with Glorot-uniform weights and zero biases.
    /// Hidden layers use `hidden`, the final layer uses `output`.
    pub fn new(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least an input and an output dimension".into(),
            ));
        }
        let n = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.uniform_range(-limit, limit))
                    .collect();
                Layer {
                    weight: Tensor::new(vec![fan_out, fan_in], data).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                    activation: if l + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for l in &layers {
            if l.weight.shape().len() != 2 {
                return Err(Error::InvalidArgument("layer weight must be a matrix".into()));
            }
            check_shape("MlpNetwork layer bias", &[l.out_dim()], l.bias.shape())?;
        }
        for pair in layers.windows(2) {
            check_len("MlpNetwork layer chain", pair[0].out_dim(), pair[1].in_dim())?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn flatten_params(&self) -> Tensor {
        Tensor::from_vec(
            self.params()
                .into_iter()
                .flat_map(|t| t.data().iter().copied())
                .collect(),
        )
    }

    pub fn set_flat_params(&mut self, flat: &Tensor) -> Result<()> {
        check_len("MlpNetwork::set_flat_params", self.num_params(), flat.len())?;
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Tensor, MlpCache)> {
        check_len("mlp_forward input", self.input_dim(), input.len())?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for layer in &self.layers {
            let x = values.last().expect("nonempty");
            let in_dim = layer.in_dim();
            let w = layer.weight.data();
            let out: Vec<f64> = layer
                .bias
                .data()
                .iter()
                .enumerate()
                .map(|(o, b)| layer.activation.apply(b + dot(&w[o * in_dim..(o + 1) * in_dim], x)))
                .collect();
            values.push(out);
        }
        let output = Tensor::from_vec(values.last().expect("nonempty").clone());
        Ok((output, MlpCache { values }))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, input: &[f64]) -> Result<Tensor> {
        Ok(self.forward(input)?.0)
    }

    fn check_cache(&self, cache: &MlpCache) -> Result<()> {
        check_len("mlp_vjp cache depth", self.layers.len() + 1, cache.values.len())?;
        check_len("mlp_vjp cache input", self.input_dim(), cache.values[0].len())?;
        for (l, layer) in self.layers.iter().enumerate() {
            check_len("mlp_vjp cache layer", layer.out_dim(), cache.values[l + 1].len())?;
        }
        Ok(())
    }

    /// Gradient of `<upstream, output>` with respect to the input and every parameter.
    pub fn vjp(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(Tensor, MlpGrads)> {
        self.backward(cache, upstream, true)
            .map(|(g, p)| (g, p.expect("param grads requested")))
    }

    /// Input gradient only; skips the outer products for the weights.
    pub fn vjp_input(&self, cache: &MlpCache, upstream: &[f64]) -> Result<Tensor> {
        Ok(self.backward(cache, upstream, false)?.0)
    }

    fn backward(
        &self,
        cache: &MlpCache,
        upstream: &[f64],
        want_params: bool,
    ) -> Result<(Tensor, Option<MlpGrads>)> {
        self.check_cache(cache)?;
        check_len("mlp_vjp upstream", self.output_dim(), upstream.len())?;
        let mut grads = want_params.then(|| Vec::with_capacity(self.layers.len()));
        let mut delta: Vec<f64> = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.values[l + 1];
            let x = &cache.values[l];
            for (d, &o) in delta.iter_mut().zip(out) {
                *d *= layer.activation.derivative_from_output(o);
            }
            let in_dim = layer.in_dim();
            let w = layer.weight.data();
            if let Some(grads) = grads.as_mut() {
                let mut gw = vec![0.0; w.len()];
                for (o, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, x, &mut gw[o * in_dim..(o + 1) * in_dim]);
                    }
                }
                grads.push((
                    Tensor::new(layer.weight.shape().to_vec(), gw).expect("sized"),
                    Tensor::from_vec(delta.clone()),
                ));
            }
            let mut next = vec![0.0; in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(d, &w[o * in_dim..(o + 1) * in_dim], &mut next);
                }
            }
            delta = next;
        }
        let grads = grads.map(|mut g| {
            g.reverse();
            MlpGrads { layers: g }
        });
        Ok((Tensor::from_vec(delta), grads))
    }

    /// Adds `scale * grads` to the parameters.
    pub fn apply_update(&mut self, grads: &MlpGrads, scale: f64) -> Result<()> {
        check_len("MlpNetwork::apply_update", self.layers.len(), grads.layers.len())?;
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            layer.weight.axpy(scale, gw)?;
            layer.bias.axpy(scale, gb)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|t| t.is_finite())
    }
}

/// Free-function forms mirroring the operation names used across the crate.
pub fn mlp_forward(net: &MlpNetwork, input: &Tensor) -> Result<(Tensor, MlpCache)> {
    net.forward(input.data())
}

pub fn mlp_vjp(net: &MlpNetwork, cache: &MlpCache, upstream: &Tensor) -> Result<(Tensor, MlpGrads)> {
    net.vjp(cache, upstream.data())
}
