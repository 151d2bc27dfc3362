//! Cross-dataset protocol: per preprocessing mode, train one task classifier
//! per training dataset and test it on every dataset's test split.

use std::fs;
use std::path::Path;

use super::harness::{
    build_eval_matrix, compare_to_baseline, evaluate_unseen, Preprocessing, Preprocessor, UnseenReport,
};
use super::tables::Report;
use crate::data::{load_manifest, SampleSet};
use crate::error::{ensure, Error, Result};
use crate::model::{load_checkpoint, ModelConfig, PrepNet};
use crate::train::{
    checkpoint_path, derive_seed, fit_task_classifier, prepare_data, write_json, ExperimentConfig, ExperimentData,
    RunState, RunStatus, Stage, TrainConfig,
};

/// Auto-encoders a run provides for each preprocessing mode.
pub struct RunModels {
    pub autoencoder: PrepNet<f32>,
    pub prepnet: PrepNet<f32>,
}

impl RunModels {
    pub fn preprocessor(&self, mode: Preprocessing) -> Preprocessor<'_> {
        match mode {
            Preprocessing::Raw => Preprocessor::Identity,
            Preprocessing::Autoencoder => Preprocessor::Autoencoder(&self.autoencoder),
            Preprocessing::Prepnet => Preprocessor::Autoencoder(&self.prepnet),
        }
    }
}

/// Fresh task classifier trained on `train`/`val` after `pre`.
///
/// Initialization and batch order depend only on `seed`, so classifiers for
/// different modes differ only through their inputs.
pub fn train_classifier(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    pre: Preprocessor<'_>,
    train: &SampleSet,
    val: &SampleSet,
    seed: u64,
) -> Result<PrepNet<f32>> {
    let mut model = PrepNet::<f32>::build(model_config, seed)?;
    let train = pre.apply_set(train)?;
    let val = pre.apply_set(val)?;
    fit_task_classifier(&mut model, &train, &val, train_config, seed)?;
    Ok(model)
}

const MATRIX_SALT: u64 = 0x6d61_7472;
const POOLED_SALT: u64 = 0x706f_6f6c;

/// Full cross-dataset report: one matrix per mode and comparisons of the
/// non-raw modes against raw.
pub fn cross_dataset_report(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: &ExperimentData,
    models: &RunModels,
    modes: &[Preprocessing],
) -> Result<Report> {
    let names = data.manifest.dataset_names.clone();
    let datasets: Vec<usize> = (0..names.len()).collect();
    let tests: Vec<(usize, SampleSet)> = datasets.iter().map(|&d| (d, data.test.of_dataset(d))).collect();
    let mut matrices = Vec::new();
    for &mode in modes {
        let pre = models.preprocessor(mode);
        let mut classifiers = Vec::new();
        for &d in &datasets {
            let seed = derive_seed(train_config.seed, MATRIX_SALT + d as u64);
            let c = train_classifier(
                model_config,
                train_config,
                pre,
                &data.train.of_dataset(d),
                &data.val.of_dataset(d),
                seed,
            )?;
            classifiers.push((d, c));
        }
        let refs: Vec<(usize, &PrepNet<f32>)> = classifiers.iter().map(|(d, c)| (*d, c)).collect();
        matrices.push(build_eval_matrix(
            &refs,
            &tests,
            pre,
            mode,
            names.clone(),
            train_config.decision_threshold,
        )?);
    }
    let comparisons = match matrices.iter().find(|m| m.preprocessing == Preprocessing::Raw) {
        Some(base) => matrices
            .iter()
            .filter(|m| m.preprocessing != Preprocessing::Raw)
            .map(|m| compare_to_baseline(m, base))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    Ok(Report {
        matrices,
        comparisons,
        unseen: None,
    })
}

/// Classifiers trained on the pooled training data of every dataset, one
/// per mode, evaluated on `unseen`.
pub fn unseen_report(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    data: &ExperimentData,
    models: &RunModels,
    unseen: &SampleSet,
    unseen_name: &str,
) -> Result<UnseenReport> {
    let seed = derive_seed(train_config.seed, POOLED_SALT);
    let mut trained = Vec::new();
    for mode in Preprocessing::ALL {
        let pre = models.preprocessor(mode);
        trained.push((mode, train_classifier(model_config, train_config, pre, &data.train, &data.val, seed)?));
    }
    let rows: Vec<_> = trained
        .iter()
        .map(|(mode, c)| (*mode, c, models.preprocessor(*mode)))
        .collect();
    evaluate_unseen(&rows, unseen, unseen_name, train_config.decision_threshold)
}

/// A completed run directory reopened for evaluation.
pub struct LoadedRun {
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub data: ExperimentData,
    pub models: RunModels,
}

impl LoadedRun {
    pub fn open(run_dir: &Path) -> Result<Self> {
        let status = RunStatus::load(run_dir)?;
        ensure!(
            status.status == RunState::Complete,
            "{} is not a completed run",
            run_dir.display()
        );
        let config_path = run_dir.join("config.json");
        let (mut config, _) = ExperimentConfig::load(&config_path)?;
        config.train.seed = status.seed;
        let manifest = load_manifest(&status.manifest)?;
        let data = prepare_data(manifest, &config, status.seed)?;
        let load = |stage| -> Result<PrepNet<f32>> {
            let mut m = PrepNet::<f32>::build(&config.model, status.seed)?;
            m.load_weights(&load_checkpoint(&checkpoint_path(run_dir, stage), &config.model)?)?;
            Ok(m)
        };
        let models = RunModels {
            autoencoder: load(Stage::AePretrain)?,
            prepnet: load(Stage::Adversarial)?,
        };
        Ok(Self {
            config,
            status,
            data,
            models,
        })
    }
}

/// `eval --matrix`: writes `metrics/matrix.json`.
pub fn eval_matrix_command(run_dir: &Path) -> Result<Report> {
    let run = LoadedRun::open(run_dir)?;
    let report = cross_dataset_report(
        &run.config.model,
        &run.config.train,
        &run.data,
        &run.models,
        &Preprocessing::ALL,
    )?;
    write_json(&run_dir.join("metrics").join("matrix.json"), &report)?;
    Ok(report)
}

/// `eval --unseen MANIFEST`: writes `metrics/unseen.json`. Every entry of
/// the manifest is used regardless of its split tag.
pub fn eval_unseen_command(run_dir: &Path, unseen_manifest: &Path) -> Result<UnseenReport> {
    let run = LoadedRun::open(run_dir)?;
    let manifest = load_manifest(unseen_manifest)?;
    let set = SampleSet::load(&manifest, &run.config.preprocess, |_| true)?;
    let name = match manifest.dataset_names.as_slice() {
        [one] => one.clone(),
        many => many.join("+"),
    };
    let report = unseen_report(&run.config.model, &run.config.train, &run.data, &run.models, &set, &name)?;
    write_json(&run_dir.join("metrics").join("unseen.json"), &report)?;
    Ok(report)
}

/// Collect whatever evaluation output a run directory holds.
pub fn load_report(run_dir: &Path) -> Result<Report> {
    let metrics = run_dir.join("metrics");
    let matrix = metrics.join("matrix.json");
    let unseen = metrics.join("unseen.json");
    let mut report = if matrix.exists() {
        let text = fs::read_to_string(&matrix).map_err(|e| Error::io(&matrix, e))?;
        serde_json::from_str(&text)?
    } else {
        Report::default()
    };
    if unseen.exists() {
        let text = fs::read_to_string(&unseen).map_err(|e| Error::io(&unseen, e))?;
        report.unseen = Some(serde_json::from_str(&text)?);
    }
    ensure!(
        !report.matrices.is_empty() || report.unseen.is_some(),
        "{} has no evaluation results; run eval first",
        run_dir.display()
    );
    Ok(report)
}
