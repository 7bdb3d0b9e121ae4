//! Attention-gated comparison of a query feature with one retrieved feature.
//!
//! `[q, r]` is stacked as a two-channel signal, convolved, squashed to a soft
//! attention map, used to gate the stacked signal element-wise, flattened and
//! projected by a ReLU dense layer to the node width.

use rand::Rng;

use crate::numeric::{conv1d_backward, conv1d_forward, pair_mut, Activation, Conv1dCache, Dense, DenseCache, ParamId, ParamRegistry, Tensor};

use super::ModelError;

#[derive(Clone, Copy, Debug)]
pub struct EvidenceMatcher {
    pub kernels: ParamId,
    pub conv_bias: ParamId,
    pub fc: Dense,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct MatchCache {
    conv: Conv1dCache,
    stacked: Vec<f64>,
    attention: Vec<f64>,
    fc: DenseCache,
}

impl MatchCache {
    pub fn attention(&self) -> &[f64] {
        &self.attention
    }
}

impl EvidenceMatcher {
    pub fn register<R: Rng>(
        registry: &mut ParamRegistry,
        prefix: &str,
        dim: usize,
        node_dim: usize,
        conv_width: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let kernels = registry.register_uniform(&format!("{prefix}.conv.kernels"), &[2, 2, conv_width], 2 * conv_width, rng)?;
        let conv_bias = registry.register_zeros(&format!("{prefix}.conv.bias"), &[2])?;
        let fc = Dense::register(registry, &format!("{prefix}.fc"), 2 * dim, node_dim, Activation::Relu, rng)?;
        Ok(Self {
            kernels,
            conv_bias,
            fc,
            dim,
        })
    }

    pub fn forward(&self, values: &[Tensor], query: &[f64], retrieved: &[f64]) -> Result<(Vec<f64>, MatchCache), ModelError> {
        if query.len() != self.dim || retrieved.len() != self.dim {
            return Err(ModelError::Evidence(format!(
                "matching expects two vectors of length {}, got {} and {}",
                self.dim,
                query.len(),
                retrieved.len()
            )));
        }
        let stacked: Vec<f64> = query.iter().chain(retrieved).copied().collect();
        let signal = Tensor::new(vec![2, self.dim], stacked.clone())?;
        let (pre, conv) = conv1d_forward(&signal, &values[self.kernels.0], &values[self.conv_bias.0])?;
        let attention: Vec<f64> = pre.data().iter().map(|&z| Activation::Sigmoid.apply(z)).collect();
        let gated: Vec<f64> = attention.iter().zip(&stacked).map(|(a, x)| a * x).collect();
        let (feat, fc) = self.fc.forward(values, &gated)?;
        Ok((
            feat,
            MatchCache {
                conv,
                stacked,
                attention,
                fc,
            },
        ))
    }

    /// Accumulates parameter gradients; returns `(∂L/∂q, ∂L/∂r)`.
    pub fn backward(&self, values: &[Tensor], grads: &mut [Tensor], cache: &MatchCache, upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d_gated = self.fc.backward(values, grads, &cache.fc, upstream);
        let mut d_stacked: Vec<f64> = d_gated.iter().zip(&cache.attention).map(|(g, a)| g * a).collect();
        let d_pre: Vec<f64> = d_gated
            .iter()
            .zip(&cache.stacked)
            .zip(&cache.attention)
            .map(|((g, x), a)| g * x * a * (1.0 - a))
            .collect();
        let d_pre = Tensor::new(vec![2, self.dim], d_pre).expect("conv output shape");
        let (gk, gb) = pair_mut(grads, self.kernels.0, self.conv_bias.0);
        let d_signal = conv1d_backward(&cache.conv, &d_pre, &values[self.kernels.0], gk, gb);
        for (d, s) in d_stacked.iter_mut().zip(d_signal.data()) {
            *d += s;
        }
        let d_retrieved = d_stacked.split_off(self.dim);
        (d_stacked, d_retrieved)
    }
}
