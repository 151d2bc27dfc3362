//! Binary classification metrics: balanced accuracy, sensitivity,
//! specificity and ROC-AUC.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Default decision threshold on the task probability.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

/// Rates derived from a confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub ba: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Full evaluation record for one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ba: f64,
    #[serde(rename = "sens")]
    pub sensitivity: f64,
    #[serde(rename = "spec")]
    pub specificity: f64,
    pub auc: f64,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub threshold: f64,
}

impl MetricsReport {
    /// Threshold `scores` (probabilities of the positive class) and compute
    /// every metric.
    pub fn from_scores(labels: &[u8], scores: &[f64], threshold: f64) -> Result<Self> {
        ensure!(
            labels.len() == scores.len(),
            "{} labels for {} scores",
            labels.len(),
            scores.len()
        );
        let preds: Vec<u8> = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        let counts = confusion_counts(labels, &preds)?;
        let rates = classification_metrics(&counts)?;
        let auc = roc_auc(labels, scores)?;
        Ok(Self {
            ba: rates.ba,
            sensitivity: rates.sensitivity,
            specificity: rates.specificity,
            auc,
            counts,
            threshold,
        })
    }
}

fn check_binary(name: &str, values: &[u8]) -> Result<()> {
    match values.iter().find(|&&v| v > 1) {
        Some(v) => Err(Error::Validation(format!("{name} value {v} is not binary"))),
        None => Ok(()),
    }
}

pub fn confusion_counts(labels: &[u8], predictions: &[u8]) -> Result<ConfusionCounts> {
    ensure!(
        labels.len() == predictions.len(),
        "{} labels but {} predictions",
        labels.len(),
        predictions.len()
    );
    check_binary("label", labels)?;
    check_binary("prediction", predictions)?;
    let mut c = ConfusionCounts::default();
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l, p) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fn_ += 1,
            (_, 1) => c.fp += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Sensitivity `TP/P`, specificity `TN/N` and their mean, the balanced accuracy.
pub fn classification_metrics(counts: &ConfusionCounts) -> Result<Rates> {
    let (p, n) = (counts.positives(), counts.negatives());
    if p == 0 || n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "balanced accuracy needs both classes (P = {p}, N = {n})"
        )));
    }
    let sensitivity = counts.tp as f64 / p as f64;
    let specificity = counts.tn as f64 / n as f64;
    // one rounding of the exact ratio (tp·N + tn·P) / 2PN
    let (tp, tn, p, n) = (counts.tp as u128, counts.tn as u128, p as u128, n as u128);
    Ok(Rates {
        ba: (tp * n + tn * p) as f64 / (2 * p * n) as f64,
        sensitivity,
        specificity,
    })
}

/// Area under the ROC curve as the Mann–Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    ensure!(
        labels.len() == scores.len(),
        "{} labels for {} scores",
        labels.len(),
        scores.len()
    );
    check_binary("label", labels)?;
    ensure!(scores.iter().all(|s| !s.is_nan()), "NaN score");
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "ROC-AUC needs both classes ({pos} positives, {neg} negatives)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Count, per tie group, how many negatives sit strictly below it; a
    // positive earns one point per lower negative and half per tied one.
    let mut wins2: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut p_group, mut n_group) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                p_group += 1;
            } else {
                n_group += 1;
            }
            j += 1;
        }
        wins2 += p_group * (2 * negatives_below + n_group);
        negatives_below += n_group;
        i = j;
    }
    Ok(wins2 as f64 / (2.0 * pos as f64 * neg as f64))
}
