//! Evaluation over dataset splits, order and scale ablations, and the
//! retrieval-quality breakdown.

pub mod metrics;

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::Serialize;

use crate::model::{MegModel, ModelConfig, ModelError, SummaryVariant};
use crate::store::{count_correct_retrievals, Dataset, Package, RetrievalResult, Split, StoreError};
use crate::train::{evidence_set, train, TrainConfig, TrainError};

pub use metrics::{auc, f1_scores, Confusion, MetricsError, MetricsReport, DEFAULT_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvidenceOrder {
    AsRetrieved,
    Reversed,
}

/// Per-query outputs of one evaluation pass.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub query_ids: Vec<String>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<bool>,
    pub retrievals: Vec<RetrievalResult>,
}

impl Evaluation {
    pub fn predictions(&self, threshold: f64) -> Vec<bool> {
        self.probabilities.iter().map(|&p| p >= threshold).collect()
    }
}

pub fn evaluate(
    model: &MegModel,
    dataset: &Dataset,
    split: Split,
    k: usize,
    order: EvidenceOrder,
) -> Result<Evaluation, EvalError> {
    let queries: Vec<&Package> = dataset.split(split).collect();
    if queries.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let mut probabilities = Vec::with_capacity(queries.len());
    let mut retrievals = Vec::with_capacity(queries.len());
    for q in &queries {
        retrievals.push(dataset.retrieve(q, k)?);
        let es = evidence_set(dataset, q, k)?;
        let es = match order {
            EvidenceOrder::AsRetrieved => es,
            EvidenceOrder::Reversed => es.reversed(),
        };
        probabilities.push(model.predict(&es)?);
    }
    let labels: Vec<bool> = queries.iter().map(|q| q.label.is_tampered()).collect();
    let report = MetricsReport::from_scores(&probabilities, &labels, DEFAULT_THRESHOLD)?;
    Ok(Evaluation {
        report,
        query_ids: queries.iter().map(|q| q.id.clone()).collect(),
        probabilities,
        labels,
        retrievals,
    })
}

pub const RELATIVE_DROP_DEFINITION: &str = "(before - after) / (1 - before)";

/// Drop measured against the headroom left above `before`; `None` when
/// `before` is already perfect and `after` differs.
pub fn relative_drop(before: f64, after: f64) -> Option<f64> {
    if before == after {
        Some(0.0)
    } else if before >= 1.0 {
        None
    } else {
        Some((before - after) / (1.0 - before))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub variant: SummaryVariant,
    pub auc_before: f64,
    pub auc_after: f64,
    pub relative_drop: Option<f64>,
}

impl AblationReport {
    pub fn new(variant: SummaryVariant, auc_before: f64, auc_after: f64) -> Self {
        Self {
            variant,
            auc_before,
            auc_after,
            relative_drop: relative_drop(auc_before, auc_after),
        }
    }

    pub fn absolute_drop(&self) -> f64 {
        self.auc_before - self.auc_after
    }
}

pub fn write_ablation_csv<W: Write>(out: &mut W, reports: &[AblationReport]) -> std::io::Result<()> {
    writeln!(out, "variant,before,after,relative_drop")?;
    for r in reports {
        let drop = r.relative_drop.map_or_else(|| "NA".to_string(), |d| d.to_string());
        writeln!(out, "{},{},{},{}", r.variant, r.auc_before, r.auc_after, drop)?;
    }
    Ok(())
}

/// Test AUC with evidence as retrieved versus reversed.
pub fn ablate_order(model: &MegModel, dataset: &Dataset, k: usize) -> Result<AblationReport, EvalError> {
    let before = evaluate(model, dataset, Split::Test, k, EvidenceOrder::AsRetrieved)?;
    let after = evaluate(model, dataset, Split::Test, k, EvidenceOrder::Reversed)?;
    Ok(AblationReport::new(model.config().variant, before.report.auc, after.report.auc))
}

/// Trains each variant with `train_config.k_train` evidences and compares its
/// test AUC at `k_train` against `k_test`.
pub fn ablate_scale(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    k_test: usize,
    variants: &[SummaryVariant],
) -> Result<Vec<AblationReport>, EvalError> {
    variants
        .iter()
        .map(|&variant| {
            let outcome = train(dataset, &model_config.with_variant(variant), train_config)?;
            scale_report(&outcome.model, dataset, train_config.k_train, k_test)
        })
        .collect()
}

pub fn scale_report(model: &MegModel, dataset: &Dataset, k_train: usize, k_test: usize) -> Result<AblationReport, EvalError> {
    let before = evaluate(model, dataset, Split::Test, k_train, EvidenceOrder::AsRetrieved)?;
    let after = evaluate(model, dataset, Split::Test, k_test, EvidenceOrder::AsRetrieved)?;
    Ok(AblationReport::new(model.config().variant, before.report.auc, after.report.auc))
}

/// Trains each variant with `train_config.k_train` evidences and runs
/// [`ablate_order`] on the result.
pub fn ablate_order_trained(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    variants: &[SummaryVariant],
) -> Result<Vec<AblationReport>, EvalError> {
    variants
        .iter()
        .map(|&variant| {
            let outcome = train(dataset, &model_config.with_variant(variant), train_config)?;
            ablate_order(&outcome.model, dataset, train_config.k_train)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RetrievalQuality {
    /// Mean correct retrievals over correctly classified queries (TP, TN).
    pub correctly_classified: Option<f64>,
    /// Mean correct retrievals over misclassified queries (FP, FN).
    pub misclassified: Option<f64>,
    pub n_correct: usize,
    pub n_misclassified: usize,
}

pub fn retrieval_quality_split(
    results: &[RetrievalResult],
    relevance: &HashMap<String, BTreeSet<String>>,
    predictions: &[bool],
    labels: &[bool],
) -> RetrievalQuality {
    let empty = BTreeSet::new();
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for ((r, &p), &y) in results.iter().zip(predictions).zip(labels) {
        let n = count_correct_retrievals(r, relevance.get(&r.query_id).unwrap_or(&empty)) as f64;
        if p == y {
            good.push(n)
        } else {
            bad.push(n)
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    RetrievalQuality {
        correctly_classified: mean(&good),
        misclassified: mean(&bad),
        n_correct: good.len(),
        n_misclassified: bad.len(),
    }
}

/// Same-entity reference ids for every query in `evaluation`.
pub fn relevance_map(dataset: &Dataset, query_ids: &[String]) -> HashMap<String, BTreeSet<String>> {
    query_ids
        .iter()
        .filter_map(|id| Some((id.clone(), dataset.relevant_ids(dataset.get(id)?))))
        .collect()
}
