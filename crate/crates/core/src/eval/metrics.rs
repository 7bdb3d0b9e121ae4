//! Classification metrics with "tampered" as the positive class.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("AUC needs at least one positive and one negative example ({positives} positive, {negatives} negative)")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{0} predictions for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite score")]
    NonFinite,
}

/// Area under the ROC curve as the Mann-Whitney statistic:
/// `P(score_pos > score_neg) + 0.5 · P(tie)` over all positive/negative pairs,
/// computed from mid-ranks.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64, MetricsError> {
    if scores.iter().any(|(s, _)| !s.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let positives = scores.iter().filter(|(_, y)| *y).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of positive ranks, with tied groups sharing their mid-rank. Ranks are
    // doubled so every quantity stays an exact integer.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j, mid-rank (i+1+j)/2
        let twice_mid = (i + 1 + j) as u128;
        let pos_in_group = sorted[i..j].iter().filter(|(_, y)| *y).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j;
    }
    let p = positives as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2.0 * positives as f64 * negatives as f64))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[bool], labels: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// `(F1-clean, F1-tampered)` from thresholded predictions (`true` = tampered).
pub fn f1_scores(predictions: &[bool], labels: &[bool]) -> (f64, f64) {
    let c = Confusion::from_predictions(predictions, labels);
    (f1(c.tn, c.fn_, c.fp), f1(c.tp, c.fp, c.fn_))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: f64,
    pub f1_clean: f64,
    pub f1_tampered: f64,
    pub n_examples: usize,
    pub confusion: Confusion,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

impl MetricsReport {
    /// Probabilities at or above `threshold` count as tampered.
    pub fn from_scores(probabilities: &[f64], labels: &[bool], threshold: f64) -> Result<Self, MetricsError> {
        if probabilities.len() != labels.len() {
            return Err(MetricsError::LengthMismatch(probabilities.len(), labels.len()));
        }
        let pairs: Vec<(f64, bool)> = probabilities.iter().copied().zip(labels.iter().copied()).collect();
        let auc = auc(&pairs)?;
        let predictions: Vec<bool> = probabilities.iter().map(|&p| p >= threshold).collect();
        let confusion = Confusion::from_predictions(&predictions, labels);
        let (f1_clean, f1_tampered) = f1_scores(&predictions, labels);
        Ok(Self {
            accuracy: (confusion.tp + confusion.tn) as f64 / labels.len() as f64,
            auc,
            f1_clean,
            f1_tampered,
            n_examples: labels.len(),
            confusion,
        })
    }
}
