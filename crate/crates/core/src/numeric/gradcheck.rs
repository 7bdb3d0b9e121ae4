//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ParamRegistry;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Perturbation size.
    pub step: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Tensors larger than this are checked on a seeded coordinate subset of this size.
    pub max_coords: usize,
    /// Denominator floor so near-zero gradients are compared on an absolute scale.
    pub scale_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            max_coords: 200,
            scale_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    pub deterministic: bool,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients currently accumulated in `registry` against central
/// differences of `loss`. The closure must be a pure function of the
/// registry's values; values are restored bit-exactly after each probe.
pub fn grad_check<F>(mut loss: F, registry: &mut ParamRegistry, config: &GradCheckConfig) -> GradCheckReport
where
    F: FnMut(&ParamRegistry) -> f64,
{
    let base = loss(registry);
    let deterministic = base.to_bits() == loss(registry).to_bits();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        deterministic,
        passed: false,
        params: Vec::new(),
    };

    for id in registry.ids().collect::<Vec<_>>() {
        let len = registry.value(id).len();
        let coords: Vec<usize> = if len > config.max_coords {
            let mut picked = sample(&mut rng, len, config.max_coords).into_vec();
            picked.sort_unstable();
            picked
        } else {
            (0..len).collect()
        };
        let mut param_max = 0.0f64;
        for &j in &coords {
            let original = registry.value(id).data()[j];
            registry.value_mut(id).data_mut()[j] = original + config.step;
            let plus = loss(registry);
            registry.value_mut(id).data_mut()[j] = original - config.step;
            let minus = loss(registry);
            registry.value_mut(id).data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * config.step);
            let analytic = registry.grad(id).data()[j];
            let err = relative_error(analytic, numeric, config.scale_floor);
            let err = if err.is_nan() { f64::INFINITY } else { err };
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((registry.name(id).to_string(), j, analytic, numeric));
            }
            param_max = param_max.max(err);
        }
        report.checked += coords.len();
        report.params.push(ParamCheck {
            name: registry.name(id).to_string(),
            checked: coords.len(),
            max_rel_error: param_max,
        });
    }
    report.passed = report.deterministic && report.max_rel_error <= config.tolerance;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;
    use std::cell::Cell;

    fn quadratic_registry() -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        let id = reg.register("theta", Tensor::vector(vec![3.0])).unwrap();
        reg.grad_mut(id).data_mut()[0] = 6.0;
        reg
    }

    #[test]
    fn quadratic_is_exact() {
        let mut reg = quadratic_registry();
        let report = grad_check(|r| r.values()[0].data()[0].powi(2), &mut reg, &GradCheckConfig::default());
        let (_, _, analytic, numeric) = report.worst.clone().unwrap();
        assert_eq!(analytic, 6.0);
        assert!((numeric - 6.0).abs() < 1e-9);
        assert!(report.passed);
        assert_eq!(reg.values()[0].data(), &[3.0]);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let mut reg = quadratic_registry();
        reg.grads[0].data_mut()[0] = 6.6;
        let report = grad_check(|r| r.values()[0].data()[0].powi(2), &mut reg, &GradCheckConfig::default());
        assert!(!report.passed);
        assert!(report.max_rel_error > 0.05);
    }

    #[test]
    fn nondeterministic_closure_flagged() {
        let mut reg = quadratic_registry();
        let calls = Cell::new(0u32);
        let report = grad_check(
            |r| {
                calls.set(calls.get() + 1);
                r.values()[0].data()[0].powi(2) + f64::from(calls.get()) * 1e-3
            },
            &mut reg,
            &GradCheckConfig::default(),
        );
        assert!(!report.deterministic);
        assert!(!report.passed);
    }

    #[test]
    fn large_tensors_are_subsampled() {
        let mut reg = ParamRegistry::new();
        let id = reg.register("w", Tensor::new(vec![30, 30], vec![0.5; 900]).unwrap()).unwrap();
        // loss = sum(w^2) / 2 -> grad = w
        let g = reg.value(id).clone();
        *reg.grad_mut(id) = g;
        let report = grad_check(
            |r| r.values()[0].data().iter().map(|v| v * v).sum::<f64>() / 2.0,
            &mut reg,
            &GradCheckConfig::default(),
        );
        assert_eq!(report.checked, 200);
        assert!(report.passed, "{report:?}");
    }
}
