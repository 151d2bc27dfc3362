use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{ensure, Result};
use crate::metrics::MetricsReport;
use crate::model::PrepNet;
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocessing {
    /// Prepared images fed to the classifier unchanged.
    Raw,
    /// Auto-encoder after reconstruction-only pretraining.
    Autoencoder,
    /// Auto-encoder after adversarial training.
    Prepnet,
}

impl Preprocessing {
    pub const ALL: [Preprocessing; 3] = [Preprocessing::Raw, Preprocessing::Autoencoder, Preprocessing::Prepnet];

    pub fn tag(self) -> &'static str {
        match self {
            Preprocessing::Raw => "raw",
            Preprocessing::Autoencoder => "autoencoder",
            Preprocessing::Prepnet => "prepnet",
        }
    }
}

/// Image transform applied ahead of the task classifier.
#[derive(Clone, Copy)]
pub enum Preprocessor<'a> {
    Identity,
    Autoencoder(&'a PrepNet<f32>),
}

impl Preprocessor<'_> {
    pub fn apply(&self, images: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Preprocessor::Identity => Ok(images.clone()),
            Preprocessor::Autoencoder(m) => m.reconstruct(images),
        }
    }

    pub fn apply_set(&self, set: &SampleSet) -> Result<SampleSet> {
        Ok(set.with_images(self.apply(&set.images)?))
    }
}

/// Run `preprocessor` then the task classifier of `classifier` over `test`.
pub fn evaluate_pair(
    classifier: &PrepNet<f32>,
    preprocessor: Preprocessor<'_>,
    test: &SampleSet,
    threshold: f64,
) -> Result<MetricsReport> {
    ensure!(!test.is_empty(), "test split is empty");
    let labels = test.labels()?;
    let inputs = preprocessor.apply(&test.images)?;
    let probs: Vec<f64> = classifier.classify_task(&inputs)?.iter().map(|&p| p as f64).collect();
    MetricsReport::from_scores(&labels, &probs, threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub train_dataset: usize,
    pub test_dataset: usize,
    pub metrics: MetricsReport,
    pub preprocessing: Preprocessing,
}

impl EvalCell {
    pub fn is_within(&self) -> bool {
        self.train_dataset == self.test_dataset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub cells: Vec<EvalCell>,
    /// Unweighted mean BA over cells with `train == test`.
    pub within_average: f64,
    /// Unweighted mean BA over cells with `train != test`.
    pub cross_average: f64,
    pub backbone: String,
    pub preprocessing: Preprocessing,
    /// Indexed by dataset id.
    pub dataset_names: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalMatrix {
    /// Assemble a matrix and compute its averages. Needs at least one
    /// within-dataset and one cross-dataset cell, no duplicate pairs, and
    /// cells that all use `preprocessing`.
    pub fn from_cells(
        cells: Vec<EvalCell>,
        dataset_names: Vec<String>,
        backbone: &str,
        preprocessing: Preprocessing,
    ) -> Result<Self> {
        let mut pairs = BTreeSet::new();
        for c in &cells {
            ensure!(
                c.train_dataset < dataset_names.len() && c.test_dataset < dataset_names.len(),
                "cell ({}, {}) refers to an unknown dataset",
                c.train_dataset,
                c.test_dataset
            );
            ensure!(
                pairs.insert((c.train_dataset, c.test_dataset)),
                "duplicate cell for train {} / test {}",
                c.train_dataset,
                c.test_dataset
            );
            ensure!(
                c.preprocessing == preprocessing,
                "cell preprocessing {} differs from matrix preprocessing {}",
                c.preprocessing.tag(),
                preprocessing.tag()
            );
        }
        // summation in (train, test) order makes the averages independent of input order
        let mut sorted: Vec<&EvalCell> = cells.iter().collect();
        sorted.sort_by_key(|c| (c.train_dataset, c.test_dataset));
        let within = mean(sorted.iter().filter(|c| c.is_within()).map(|c| c.metrics.ba));
        let cross = mean(sorted.iter().filter(|c| !c.is_within()).map(|c| c.metrics.ba));
        let (Some(within_average), Some(cross_average)) = (within, cross) else {
            return Err(crate::Error::Validation(
                "matrix needs both within-dataset and cross-dataset cells".into(),
            ));
        };
        Ok(Self {
            cells,
            within_average,
            cross_average,
            backbone: backbone.to_string(),
            preprocessing,
            dataset_names,
        })
    }

    pub fn cell(&self, train: usize, test: usize) -> Option<&EvalCell> {
        self.cells
            .iter()
            .find(|c| c.train_dataset == train && c.test_dataset == test)
    }

    pub fn sorted_cells(&self) -> Vec<&EvalCell> {
        let mut v: Vec<&EvalCell> = self.cells.iter().collect();
        v.sort_by_key(|c| (c.train_dataset, c.test_dataset));
        v
    }

    pub fn dataset_name(&self, id: usize) -> &str {
        self.dataset_names.get(id).map_or("?", String::as_str)
    }

    fn pair_set(&self) -> BTreeSet<(usize, usize)> {
        self.cells.iter().map(|c| (c.train_dataset, c.test_dataset)).collect()
    }
}

/// One classifier per training dataset, evaluated on every test split.
///
/// `classifiers[i]` is the model trained on `train_datasets[i]`; `tests`
/// holds the test split of each dataset keyed by dataset id.
pub fn build_eval_matrix(
    classifiers: &[(usize, &PrepNet<f32>)],
    tests: &[(usize, SampleSet)],
    preprocessor: Preprocessor<'_>,
    preprocessing: Preprocessing,
    dataset_names: Vec<String>,
    threshold: f64,
) -> Result<EvalMatrix> {
    ensure!(!classifiers.is_empty(), "no trained classifiers");
    let backbone = classifiers[0].1.config().backbone.tag();
    let test_inputs = tests
        .iter()
        .map(|(id, set)| Ok((*id, preprocessor.apply_set(set)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for &(train_id, model) in classifiers {
        for (test_id, set) in &test_inputs {
            let metrics = evaluate_pair(model, Preprocessor::Identity, set, threshold)?;
            cells.push(EvalCell {
                train_dataset: train_id,
                test_dataset: *test_id,
                metrics,
                preprocessing,
            });
        }
    }
    EvalMatrix::from_cells(cells, dataset_names, backbone, preprocessing)
}

/// `100·(candidate − baseline)`.
pub fn pp_delta(candidate: f64, baseline: f64) -> f64 {
    100.0 * (candidate - baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub candidate: EvalMatrix,
    pub baseline: EvalMatrix,
    pub delta_within_pp: f64,
    pub delta_cross_pp: f64,
}

pub fn compare_to_baseline(candidate: &EvalMatrix, baseline: &EvalMatrix) -> Result<ComparisonReport> {
    ensure!(
        candidate.pair_set() == baseline.pair_set(),
        "candidate and baseline matrices cover different (train, test) pairs"
    );
    ensure!(
        candidate.backbone == baseline.backbone,
        "backbone {} differs from baseline backbone {}",
        candidate.backbone,
        baseline.backbone
    );
    Ok(ComparisonReport {
        candidate: candidate.clone(),
        baseline: baseline.clone(),
        delta_within_pp: pp_delta(candidate.within_average, baseline.within_average),
        delta_cross_pp: pp_delta(candidate.cross_average, baseline.cross_average),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub ba: f64,
    pub sens: f64,
    pub spec: f64,
    pub auc: f64,
}

impl MetricDeltas {
    pub fn between(candidate: &MetricsReport, baseline: &MetricsReport) -> Self {
        Self {
            ba: pp_delta(candidate.ba, baseline.ba),
            sens: pp_delta(candidate.sensitivity, baseline.sensitivity),
            spec: pp_delta(candidate.specificity, baseline.specificity),
            auc: pp_delta(candidate.auc, baseline.auc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenRow {
    pub preprocessing: Preprocessing,
    pub metrics: MetricsReport,
    /// Relative to the raw row.
    pub delta_pp: MetricDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnseenReport {
    pub dataset: String,
    pub backbone: String,
    pub rows: Vec<UnseenRow>,
}

/// Evaluate one classifier per preprocessing mode on a dataset none of them
/// was trained on. The raw row, which must be present, is the baseline.
pub fn evaluate_unseen(
    models: &[(Preprocessing, &PrepNet<f32>, Preprocessor<'_>)],
    unseen: &SampleSet,
    dataset: &str,
    threshold: f64,
) -> Result<UnseenReport> {
    ensure!(!models.is_empty(), "no models to evaluate");
    let mut reports = Vec::with_capacity(models.len());
    for &(mode, classifier, pre) in models {
        reports.push((mode, evaluate_pair(classifier, pre, unseen, threshold)?));
    }
    let Some(&(_, base)) = reports.iter().find(|(m, _)| *m == Preprocessing::Raw) else {
        return Err(crate::Error::Validation("unseen evaluation needs a raw baseline row".into()));
    };
    Ok(UnseenReport {
        dataset: dataset.to_string(),
        backbone: models[0].1.config().backbone.tag().to_string(),
        rows: reports
            .into_iter()
            .map(|(preprocessing, metrics)| UnseenRow {
                preprocessing,
                metrics,
                delta_pp: MetricDeltas::between(&metrics, &base),
            })
            .collect(),
    })
}
