//! Supervised training with Adam, mini-batches and validation-AUC model
//! selection.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eval::metrics::{auc, MetricsError};
use crate::model::{EvidenceSet, MegModel, ModelConfig, ModelError};
use crate::numeric::{adam_step, AdamConfig, Tensor};
use crate::store::{Dataset, Package, Split, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Evidences retrieved per query for training and validation.
    pub k_train: usize,
    pub seed: u64,
    /// Batches between validation passes.
    pub val_check_interval: usize,
    /// Global gradient-norm clip; off when `None`.
    pub grad_clip: Option<f64>,
    /// Retrieve each training query's evidence once instead of every epoch.
    pub cache_retrievals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 0.001,
            epochs: 30,
            k_train: 5,
            seed: 0,
            val_check_interval: 50,
            grad_clip: None,
            cache_retrievals: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.k_train == 0 || self.val_check_interval == 0 {
            return Err(TrainError::Config(
                "batch_size, k_train and val_check_interval must be at least 1".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

type Snapshot = Vec<(String, Tensor)>;

const PROB_FLOOR: f64 = 1e-12;

/// Binary cross-entropy with `p` clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: f64, tampered: bool) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if tampered {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// `∂bce/∂p` at the clamped probability.
pub fn bce_grad(p: f64, tampered: bool) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    if tampered {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Retrieves `k` evidences for `query` from the dataset's reference index.
pub fn evidence_set(dataset: &Dataset, query: &Package, k: usize) -> Result<EvidenceSet, TrainError> {
    let result = dataset.retrieve(query, k)?;
    let retrieved = dataset.resolve(&result)?.into_iter().cloned().collect();
    Ok(EvidenceSet::new(query.clone(), retrieved)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub batch: usize,
    pub train_loss: f64,
    pub val_auc: Option<f64>,
}

pub fn write_history_csv<W: Write>(out: &mut W, history: &[HistoryRow]) -> std::io::Result<()> {
    writeln!(out, "batch,train_loss,val_auc")?;
    for row in history {
        match row.val_auc {
            Some(v) => writeln!(out, "{},{},{}", row.batch, row.train_loss, v)?,
            None => writeln!(out, "{},{},", row.batch, row.train_loss)?,
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model holding the best validation checkpoint.
    pub model: MegModel,
    pub best_val_auc: f64,
    pub best_batch: usize,
    pub history: Vec<HistoryRow>,
}

/// AUC of `model` over `sets` with their tampering labels.
pub fn auc_of(model: &MegModel, sets: &[(EvidenceSet, bool)]) -> Result<f64, TrainError> {
    let scores = sets
        .iter()
        .map(|(es, y)| Ok((model.predict(es)?, *y)))
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(auc(&scores)?)
}

pub fn train(dataset: &Dataset, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let model = MegModel::new(model_config.clone(), &dataset.schema, config.seed)?;
    train_model(model, dataset, config)
}

/// Trains an already initialized model.
pub fn train_model(mut model: MegModel, dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let train_queries: Vec<&Package> = dataset.split(Split::Train).collect();
    if train_queries.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    let val_sets = dataset
        .split(Split::Val)
        .map(|p| Ok((evidence_set(dataset, p, config.k_train)?, p.label.is_tampered())))
        .collect::<Result<Vec<_>, TrainError>>()?;
    if val_sets.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    let cached: Option<Vec<EvidenceSet>> = if config.cache_retrievals {
        Some(
            train_queries
                .iter()
                .map(|p| evidence_set(dataset, p, config.k_train))
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };

    let adam = AdamConfig::with_learning_rate(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train_queries.len()).collect();
    let batches_per_epoch = train_queries.len().div_ceil(config.batch_size);
    let total_batches = batches_per_epoch * config.epochs;

    let mut history = Vec::with_capacity(total_batches);
    // (val auc, batch, parameter snapshot)
    let mut best: Option<(f64, usize, Snapshot)> = None;
    let mut batch = 0usize;
    model.params_mut().zero_grads();

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut loss = 0.0;
            for &i in chunk {
                let query = train_queries[i];
                let live;
                let es = match &cached {
                    Some(sets) => &sets[i],
                    None => {
                        live = evidence_set(dataset, query, config.k_train)?;
                        &live
                    }
                };
                let tampered = query.label.is_tampered();
                let p = model.forward(es)?;
                loss += bce_loss(p, tampered);
                model.backward(bce_grad(p, tampered) * scale)?;
            }
            model.clear_tape();
            if let Some(limit) = config.grad_clip {
                let norm = model.params().grad_norm();
                if norm > limit {
                    model.params_mut().scale_grads(limit / norm);
                }
            }
            adam_step(model.params_mut(), &adam);
            batch += 1;

            let val_auc = if batch.is_multiple_of(config.val_check_interval) || batch == total_batches {
                let v = auc_of(&model, &val_sets)?;
                if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                    best = Some((v, batch, model.params().snapshot()));
                }
                Some(v)
            } else {
                None
            };
            history.push(HistoryRow {
                batch,
                train_loss: loss * scale,
                val_auc,
            });
        }
    }

    let (best_val_auc, best_batch) = match best {
        Some((v, b, snapshot)) => {
            model.params_mut().load(&snapshot).map_err(ModelError::from)?;
            (v, b)
        }
        // zero epochs: keep the initial parameters
        None => (auc_of(&model, &val_sets)?, 0),
    };
    Ok(TrainOutcome {
        model,
        best_val_auc,
        best_batch,
        history,
    })
}
