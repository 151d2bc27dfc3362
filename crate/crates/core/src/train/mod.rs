mod artifacts;
mod config;
mod early_stop;
mod log;
mod pipeline;
mod search;
mod stages;

pub use artifacts::{flag_artifacts, ArtifactFlag};
pub use config::{LearningRates, Stage, StageEpochs, TrainConfig};
pub use early_stop::{BandStopper, PlateauStopper};
pub use log::{EpochRecord, LogRecord, StepRecord, TrainLog};
pub(crate) use pipeline::write_json;
pub use pipeline::{
    checkpoint_path, derive_seed, prepare_data, resolve_seed, run_pipeline, run_stage, DatasetMetrics,
    ExperimentConfig, ExperimentData, FinalMetrics, PipelineOutput, RunOptions, RunState, RunStatus, StageAudit,
    SEED_ENV, SYNTHETIC_W_FOOL,
};
pub use search::{successive_halving_search, SearchResult, SearchSpace, TrialRecord};
pub use stages::{
    discriminator_accuracy, fit_task_classifier, mean_rec_loss, per_sample_rec_losses, stage_adversarial,
    stage_pretrain_autoencoder, stage_rng, stage_task_classifier, stage_warmup_discriminator, task_metrics,
    StageOutcome, TrainData, CHANCE_TOLERANCE,
};
