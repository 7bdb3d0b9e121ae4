use serde::{Deserialize, Serialize};

use super::tensor::{matvec, matvec_t_acc, outer_acc};
use super::{NumericError, ParamId, ParamRegistry, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Values kept from a dense forward pass.
#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Vec<f64>,
    output: Vec<f64>,
    activation: Activation,
}

impl DenseCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// `act(W·x + b)`.
pub fn dense_forward(
    x: &[f64],
    weights: &Tensor,
    bias: &Tensor,
    activation: Activation,
) -> Result<(Vec<f64>, DenseCache), NumericError> {
    if weights.shape().len() != 2 || weights.cols() != x.len() || bias.shape() != [weights.rows()] {
        return Err(NumericError::Shape(format!(
            "dense: x[{}], W{:?}, b{:?}",
            x.len(),
            weights.shape(),
            bias.shape()
        )));
    }
    let mut y = matvec(weights, x);
    for (v, b) in y.iter_mut().zip(bias.data()) {
        *v = activation.apply(*v + b);
    }
    let cache = DenseCache {
        input: x.to_vec(),
        output: y.clone(),
        activation,
    };
    Ok((y, cache))
}

/// Accumulates `∂L/∂W` and `∂L/∂b`, returns `∂L/∂x`.
pub fn dense_backward(
    cache: &DenseCache,
    upstream: &[f64],
    weights: &Tensor,
    grad_weights: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Vec<f64> {
    let delta: Vec<f64> = upstream
        .iter()
        .zip(&cache.output)
        .map(|(g, &y)| g * cache.activation.derivative_from_output(y))
        .collect();
    outer_acc(grad_weights, &delta, &cache.input);
    for (gb, d) in grad_bias.data_mut().iter_mut().zip(&delta) {
        *gb += d;
    }
    let mut dx = vec![0.0; cache.input.len()];
    matvec_t_acc(weights, &delta, &mut dx);
    dx
}

/// A dense layer whose weights live in a [`ParamRegistry`].
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub activation: Activation,
}

impl Dense {
    pub fn register<R: rand::Rng>(
        registry: &mut ParamRegistry,
        prefix: &str,
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let weight = registry.register_uniform(&format!("{prefix}.weight"), &[outputs, inputs], inputs, rng)?;
        let bias = registry.register_zeros(&format!("{prefix}.bias"), &[outputs])?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn forward(&self, values: &[Tensor], x: &[f64]) -> Result<(Vec<f64>, DenseCache), NumericError> {
        dense_forward(x, &values[self.weight.0], &values[self.bias.0], self.activation)
    }

    pub fn backward(
        &self,
        values: &[Tensor],
        grads: &mut [Tensor],
        cache: &DenseCache,
        upstream: &[f64],
    ) -> Vec<f64> {
        let (gw, gb) = pair_mut(grads, self.weight.0, self.bias.0);
        dense_backward(cache, upstream, &values[self.weight.0], gw, gb)
    }
}

/// Two distinct mutable entries of a slice.
pub(crate) fn pair_mut<T>(items: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert_ne!(a, b);
    if a < b {
        let (lo, hi) = items.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = items.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}
