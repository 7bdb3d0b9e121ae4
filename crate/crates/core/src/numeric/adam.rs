use serde::{Deserialize, Serialize};

use super::ParamRegistry;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// One bias-corrected Adam update over every registered parameter, then
/// clears the gradient accumulators. A registry with no parameters is left
/// as is (including its step counter).
pub fn adam_step(registry: &mut ParamRegistry, config: &AdamConfig) {
    if registry.is_empty() {
        return;
    }
    registry.step += 1;
    let t = registry.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    let lr = config.learning_rate;

    for i in 0..registry.values.len() {
        let grad = registry.grads[i].data();
        let m = registry.first_moment[i].data_mut();
        let v = registry.second_moment[i].data_mut();
        let theta = registry.values[i].data_mut();
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            theta[j] -= lr * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    registry.zero_grads();
}
