//! End-to-end gradient verification on small synthetic instances.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::{EvidenceSet, MegModel, ModelConfig, ModelError};
use crate::numeric::{grad_check, l2_norm, GradCheckConfig, GradCheckReport};
use crate::store::{Label, Package, Schema, Split};
use crate::train::{bce_grad, bce_loss};

/// Shape of a micro instance.
#[derive(Clone, Debug)]
pub struct MicroShape {
    pub modalities: Vec<(String, usize)>,
    pub k: usize,
}

impl Default for MicroShape {
    fn default() -> Self {
        Self {
            modalities: vec![("image".into(), 8), ("text".into(), 8)],
            k: 2,
        }
    }
}

/// Model configuration sized for micro gradient checks.
pub fn micro_model_config() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        node_dim: 8,
        detector_hidden: 8,
        ..ModelConfig::default()
    }
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let n = l2_norm(&v);
    v.into_iter().map(|x| x / n).collect()
}

/// Random unit-norm query and evidences for every modality of `shape`.
pub fn micro_instance(shape: &MicroShape, seed: u64) -> (Schema, EvidenceSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::new(shape.modalities.iter().cloned());
    let mut package = |id: String, split: Split| Package {
        id,
        split,
        label: Label::Clean,
        entity_id: String::new(),
        modalities: shape
            .modalities
            .iter()
            .map(|(m, d)| (m.clone(), random_unit(&mut rng, *d)))
            .collect::<BTreeMap<_, _>>(),
    };
    let query = package("query".into(), Split::Test);
    let retrieved = (0..shape.k).map(|i| package(format!("ref{i}"), Split::Reference)).collect();
    (schema, EvidenceSet::new(query, retrieved).expect("shared modalities"))
}

/// Checks `∂ bce(model(evidence), label) / ∂θ` against central differences.
pub fn check_model_gradients(
    model: &mut MegModel,
    evidence: &EvidenceSet,
    tampered: bool,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, ModelError> {
    model.params_mut().zero_grads();
    let p = model.forward(evidence)?;
    model.backward(bce_grad(p, tampered))?;
    model.clear_tape();
    let mut registry = model.params().clone();
    let frozen: &MegModel = model;
    let report = grad_check(
        |reg| {
            let p = frozen
                .run_with(reg.values(), evidence)
                .expect("forward on a validated instance")
                .probability();
            bce_loss(p, tampered)
        },
        &mut registry,
        config,
    );
    Ok(report)
}

/// Builds a micro instance and model for `model_config`, then checks gradients.
pub fn micro_gradcheck(
    model_config: &ModelConfig,
    shape: &MicroShape,
    seed: u64,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, ModelError> {
    let (schema, evidence) = micro_instance(shape, seed);
    let mut model = MegModel::new(model_config.clone(), &schema, seed)?;
    check_model_gradients(&mut model, &evidence, seed.is_multiple_of(2), config)
}
