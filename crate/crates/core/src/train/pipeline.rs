//! End-to-end run: split, four stages, checkpoints, logs and final metrics
//! in a run directory.
//!
//! ```text
//! RUN/
//!   config.json            verbatim copy of the experiment config
//!   run.json               status, seed, manifest path, per-stage parameter hashes
//!   logs.jsonl             TrainLog, one record per line
//!   checkpoints/stage{1..4}.ckpt
//!   metrics/final.json     per-dataset test metrics of the pipeline's classifier
//!   metrics/artifacts.json reconstruction-loss screening of the test split
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::{flag_artifacts, ArtifactFlag};
use super::config::{Stage, TrainConfig};
use super::log::TrainLog;
use super::stages::{
    discriminator_accuracy, per_sample_rec_losses, stage_adversarial, stage_pretrain_autoencoder, stage_task_classifier,
    stage_warmup_discriminator, task_metrics, StageOutcome, TrainData,
};
use crate::data::{load_manifest, split_dataset, DatasetManifest, PreprocessConfig, SampleSet, Split, SplitRatios};
use crate::error::{ensure, Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, PrepNet};
use crate::nn::Component;

pub const SEED_ENV: &str = "PREPNET_SEED";

/// Fool-loss weight of [`ExperimentConfig::synthetic`].
pub const SYNTHETIC_W_FOOL: f64 = 0.005;

/// The single document a run is configured from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Relative paths are resolved against the config file's directory.
    pub manifest: PathBuf,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Used only when the manifest leaves some entries unassigned.
    #[serde(default)]
    pub split: SplitRatios,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.preprocess
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.preprocess.target_size != self.model.input_size {
            return Err(Error::Config(format!(
                "preprocess target_size {:?} must equal model input_size {:?}",
                self.preprocess.target_size, self.model.input_size
            )));
        }
        Ok(())
    }

    /// Parse a config document; `base_dir` anchors a relative manifest path.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if c.manifest.is_relative() {
            c.manifest = base_dir.join(&c.manifest);
        }
        c.validate()?;
        Ok(c)
    }

    /// Config for a benchmark written by `generate_synthetic_benchmark`, with
    /// the manifest relative to the benchmark directory.
    ///
    /// Synthetic images are not equalized, since per-image equalization erases
    /// most of the intensity nuisances the domains differ by. The fool weight
    /// is lowered: at 1.0 the auto-encoder wins the game by washing out the
    /// class signal along with the domain.
    pub fn synthetic(domains: usize, size: (usize, usize)) -> Self {
        let mut model = ModelConfig {
            input_size: size,
            ..Default::default()
        };
        model.dataset_head.outputs = domains.max(2);
        let mut train = TrainConfig::default();
        train.loss_weights.w_fool = SYNTHETIC_W_FOOL;
        Self {
            manifest: PathBuf::from("manifest.jsonl"),
            preprocess: PreprocessConfig {
                target_size: size,
                equalize: false,
                ..Default::default()
            },
            model,
            train,
            split: Default::default(),
        }
    }

    /// Returns the parsed config and the raw text it came from.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::from_json(&text, base)?, text))
    }
}

/// Seed precedence: explicit flag, then `PREPNET_SEED`, then the config.
pub fn resolve_seed(config_seed: u64, flag: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        _ => Ok(config_seed),
    }
}

/// Mix a salt into a seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Incomplete,
    Complete,
}

/// Component hashes before and after one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAudit {
    pub stage: Stage,
    pub before: BTreeMap<Component, String>,
    pub after: BTreeMap<Component, String>,
    pub changed: Vec<Component>,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub final_val: Option<f64>,
    /// Discriminator accuracy on reconstructions of the test split, recorded
    /// after the warm-up and adversarial stages.
    pub test_disc_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub status: RunState,
    pub seed: u64,
    /// Absolute path of the manifest the run was trained from.
    pub manifest: PathBuf,
    pub stages: Vec<StageAudit>,
    pub error: Option<String>,
}

impl RunStatus {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let p = run_dir.join("run.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn store(&self, run_dir: &Path) -> Result<()> {
        write_json(&run_dir.join("run.json"), self)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_path(run_dir: &Path, stage: Stage) -> PathBuf {
    run_dir.join("checkpoints").join(format!("stage{}.ckpt", stage.number()))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Highest-precedence seed, e.g. from a command-line flag.
    pub seed: Option<u64>,
    /// Value of `PREPNET_SEED`, if set.
    pub seed_env: Option<String>,
    /// Allow replacing a completed run.
    pub force: bool,
    /// Continue an incomplete run from its last finished stage.
    pub resume: bool,
    /// Stop after this stage, leaving the run incomplete.
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub dataset_id: usize,
    pub dataset: String,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub per_dataset: Vec<DatasetMetrics>,
    pub pooled: MetricsReport,
    /// Discriminator accuracy on test-split reconstructions after each of
    /// the warm-up and adversarial stages.
    pub disc_accuracy_after_warmup: Option<f64>,
    pub disc_accuracy_after_adversarial: Option<f64>,
    pub artifacts_flagged: usize,
}

/// Everything a finished (or partially finished) run produced in memory.
pub struct PipelineOutput {
    pub run_dir: PathBuf,
    pub seed: u64,
    pub model: PrepNet<f32>,
    pub log: TrainLog,
    pub status: RunStatus,
    pub final_metrics: Option<FinalMetrics>,
}

/// Loaded splits of an experiment, images prepared to `[0, 1]`.
pub struct ExperimentData {
    pub manifest: DatasetManifest,
    pub train: SampleSet,
    pub val: SampleSet,
    pub test: SampleSet,
}

impl ExperimentData {
    pub fn train_data(&self) -> TrainData {
        TrainData {
            train: self.train.clone(),
            val: self.val.clone(),
        }
    }
}

/// Assign splits where the manifest has none, check the preconditions of
/// adversarial training, and decode every image.
pub fn prepare_data(manifest: DatasetManifest, config: &ExperimentConfig, seed: u64) -> Result<ExperimentData> {
    let k = manifest.domain_count();
    ensure!(k >= 2, "adversarial training needs at least two datasets, manifest has {k}");
    if config.model.domain_count() != k {
        return Err(Error::Config(format!(
            "model.dataset_head.outputs is {} but the manifest has {k} datasets",
            config.model.domain_count()
        )));
    }
    let manifest = if manifest.entries.iter().any(|e| e.split == Split::Unassigned) {
        split_dataset(&manifest, config.split, seed)?
    } else {
        manifest
    };
    let train = SampleSet::load_split(&manifest, &config.preprocess, Split::Train)?;
    let val = SampleSet::load_split(&manifest, &config.preprocess, Split::Val)?;
    let test = SampleSet::load_split(&manifest, &config.preprocess, Split::Test)?;
    for d in 0..k {
        ensure!(
            train.dataset_ids.contains(&d),
            "dataset {} has no training samples",
            manifest.dataset_names[d]
        );
        ensure!(
            val.dataset_ids.contains(&d),
            "dataset {} has no validation samples",
            manifest.dataset_names[d]
        );
    }
    Ok(ExperimentData {
        manifest,
        train,
        val,
        test,
    })
}

fn hashes(model: &PrepNet<f32>) -> BTreeMap<Component, String> {
    Component::ALL.iter().map(|&c| (c, model.component_hash(c))).collect()
}

/// Run one stage and audit which components it changed.
pub fn run_stage(
    model: &mut PrepNet<f32>,
    stage: Stage,
    data: &TrainData,
    config: &TrainConfig,
) -> Result<(StageOutcome, StageAudit)> {
    let before = hashes(model);
    let outcome = match stage {
        Stage::AePretrain => stage_pretrain_autoencoder(model, data, config)?,
        Stage::Warmup => stage_warmup_discriminator(model, data, config)?,
        Stage::Adversarial => stage_adversarial(model, data, config)?,
        Stage::Task => stage_task_classifier(model, data, config)?,
    };
    let after = hashes(model);
    let changed: Vec<Component> = Component::ALL
        .into_iter()
        .filter(|c| before[c] != after[c])
        .collect();
    if let Some(c) = changed.iter().find(|c| !stage.trainable().contains(c)) {
        return Err(Error::Validation(format!(
            "stage {} modified frozen component {}",
            stage.name(),
            c.prefix()
        )));
    }
    let audit = StageAudit {
        stage,
        before,
        after,
        changed,
        epochs_run: outcome.epochs_run,
        stopped_early: outcome.stopped_early,
        final_val: outcome.final_val,
        test_disc_accuracy: None,
    };
    Ok((outcome, audit))
}

fn prepare_run_dir(run_dir: &Path, raw_config: &str, options: &RunOptions) -> Result<Option<RunStatus>> {
    let existing = if run_dir.join("run.json").exists() {
        Some(RunStatus::load(run_dir)?)
    } else {
        None
    };
    if let Some(s) = &existing {
        if s.status == RunState::Complete && !options.force {
            return Err(Error::Validation(format!(
                "{} holds a completed run; pass --force to replace it",
                run_dir.display()
            )));
        }
    }
    fs::create_dir_all(run_dir.join("checkpoints")).map_err(|e| Error::io(run_dir, e))?;
    fs::create_dir_all(run_dir.join("metrics")).map_err(|e| Error::io(run_dir, e))?;
    let config_path = run_dir.join("config.json");
    if options.resume {
        if let Ok(previous) = fs::read_to_string(&config_path) {
            if previous != raw_config {
                return Err(Error::Config(format!(
                    "cannot resume {}: config differs from the one it was started with",
                    run_dir.display()
                )));
            }
        }
    }
    fs::write(&config_path, raw_config).map_err(|e| Error::io(&config_path, e))?;
    Ok(existing.filter(|s| options.resume && s.status == RunState::Incomplete))
}

/// Execute the four stages into `run_dir`.
pub fn run_pipeline(
    config: &ExperimentConfig,
    raw_config: &str,
    run_dir: &Path,
    options: &RunOptions,
) -> Result<PipelineOutput> {
    config.validate()?;
    let seed = resolve_seed(config.train.seed, options.seed, options.seed_env.as_deref())?;
    let manifest = load_manifest(&config.manifest)?;
    let resumed = prepare_run_dir(run_dir, raw_config, options)?;
    let seed = match &resumed {
        Some(s) if s.seed != seed => {
            return Err(Error::Config(format!(
                "cannot resume with seed {seed}; the run was started with seed {}",
                s.seed
            )))
        }
        _ => seed,
    };
    let mut train_config = config.train.clone();
    train_config.seed = seed;

    let data = prepare_data(manifest, config, seed)?;
    let train_data = data.train_data();

    let mut model = PrepNet::<f32>::build(&config.model, seed)?;
    let mut status = RunStatus {
        status: RunState::Incomplete,
        seed,
        manifest: fs::canonicalize(&config.manifest).map_err(|e| Error::io(&config.manifest, e))?,
        stages: Vec::new(),
        error: None,
    };
    let mut log = TrainLog::new();
    let logs_path = run_dir.join("logs.jsonl");

    if let Some(previous) = resumed {
        let done = previous.stages.len();
        if done > 0 {
            let last = previous.stages[done - 1].stage;
            let w = load_checkpoint(&checkpoint_path(run_dir, last), &config.model)?;
            model.load_weights(&w)?;
            log = TrainLog::read_jsonl(&logs_path)?;
            log.records.retain(|r| r.stage() <= last);
        }
        status.stages = previous.stages;
    }
    status.store(run_dir)?;
    log.write_jsonl(&logs_path)?;

    for stage in Stage::ALL {
        if status.stages.iter().any(|a| a.stage == stage) {
            continue;
        }
        let result = run_stage(&mut model, stage, &train_data, &train_config);
        let (outcome, mut audit) = match result {
            Ok(r) => r,
            Err(e) => {
                status.error = Some(e.to_string());
                status.store(run_dir)?;
                return Err(e);
            }
        };
        if matches!(stage, Stage::Warmup | Stage::Adversarial) && !data.test.is_empty() {
            let recon = model.reconstruct(&data.test.images)?;
            audit.test_disc_accuracy = Some(discriminator_accuracy(&model, &recon, &data.test.dataset_ids)?);
        }
        save_checkpoint(&model.weights(), &checkpoint_path(run_dir, stage))?;
        log.extend(outcome.log);
        log.write_jsonl(&logs_path)?;
        status.stages.push(audit);
        status.store(run_dir)?;
        if options.stop_after == Some(stage) {
            return Ok(PipelineOutput {
                run_dir: run_dir.to_path_buf(),
                seed,
                model,
                log,
                status,
                final_metrics: None,
            });
        }
    }

    let final_metrics = final_metrics(&model, &data, &train_config, &status)?;
    write_json(&run_dir.join("metrics").join("final.json"), &final_metrics.0)?;
    write_json(&run_dir.join("metrics").join("artifacts.json"), &final_metrics.1)?;
    status.status = RunState::Complete;
    status.store(run_dir)?;
    Ok(PipelineOutput {
        run_dir: run_dir.to_path_buf(),
        seed,
        model,
        log,
        status,
        final_metrics: Some(final_metrics.0),
    })
}

fn final_metrics(
    model: &PrepNet<f32>,
    data: &ExperimentData,
    config: &TrainConfig,
    status: &RunStatus,
) -> Result<(FinalMetrics, Vec<ArtifactFlag>)> {
    let test = &data.test;
    ensure!(!test.is_empty(), "the test split is empty");
    let recon = test.with_images(model.reconstruct(&test.images)?);
    let mut per_dataset = Vec::new();
    for d in recon.datasets_present() {
        let subset = recon.of_dataset(d);
        let labels = subset.binary_labels()?;
        per_dataset.push(DatasetMetrics {
            dataset_id: d,
            dataset: data.manifest.dataset_names[d].clone(),
            metrics: task_metrics(model, &subset.images, &labels, config.decision_threshold)?,
        });
    }
    let pooled = task_metrics(model, &recon.images, &recon.binary_labels()?, config.decision_threshold)?;
    let flags = flag_artifacts(
        &per_sample_rec_losses(model, test)?,
        config.artifact_threshold_multiplier,
    )?;
    let held_out = |stage: Stage| {
        status
            .stages
            .iter()
            .find(|a| a.stage == stage)
            .and_then(|a| a.test_disc_accuracy)
    };
    Ok((
        FinalMetrics {
            per_dataset,
            pooled,
            disc_accuracy_after_warmup: held_out(Stage::Warmup),
            disc_accuracy_after_adversarial: held_out(Stage::Adversarial),
            artifacts_flagged: flags.iter().filter(|f| f.flagged).count(),
        },
        flags,
    ))
}
