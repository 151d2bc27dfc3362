use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::DEFAULT_THRESHOLD;
use crate::nn::{AdamWConfig, Component};

/// The four training stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AePretrain,
    Warmup,
    Adversarial,
    Task,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::AePretrain, Stage::Warmup, Stage::Adversarial, Stage::Task];

    /// 1-based position, used in checkpoint file names.
    pub fn number(self) -> usize {
        self as usize + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::AePretrain => "ae_pretrain",
            Stage::Warmup => "warmup",
            Stage::Adversarial => "adversarial",
            Stage::Task => "task",
        }
    }

    /// Components whose parameters the stage may change.
    pub fn trainable(self) -> &'static [Component] {
        match self {
            Stage::AePretrain => &Component::AUTOENCODER,
            Stage::Warmup => &[Component::DatasetClassifier],
            Stage::Adversarial => &[Component::Encoder, Component::Decoder, Component::DatasetClassifier],
            Stage::Task => &[Component::TaskClassifier],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageEpochs {
    pub ae_pretrain: usize,
    pub warmup: usize,
    pub adversarial: usize,
    pub task: usize,
}

impl Default for StageEpochs {
    fn default() -> Self {
        Self {
            ae_pretrain: 20,
            warmup: 2,
            adversarial: 20,
            task: 20,
        }
    }
}

impl StageEpochs {
    pub fn get(&self, stage: Stage) -> usize {
        match stage {
            Stage::AePretrain => self.ae_pretrain,
            Stage::Warmup => self.warmup,
            Stage::Adversarial => self.adversarial,
            Stage::Task => self.task,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub encoder: f64,
    pub decoder: f64,
    pub dataset_classifier: f64,
    pub task_classifier: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self::uniform(1e-3)
    }
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        Self {
            encoder: lr,
            decoder: lr,
            dataset_classifier: lr,
            task_classifier: lr,
        }
    }

    pub fn get(&self, component: Component) -> f64 {
        match component {
            Component::Encoder => self.encoder,
            Component::Decoder => self.decoder,
            Component::DatasetClassifier => self.dataset_classifier,
            Component::TaskClassifier => self.task_classifier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: StageEpochs,
    pub batch_size: usize,
    pub learning_rates: LearningRates,
    pub optimizer: AdamWConfig,
    pub loss_weights: LossWeights,
    pub seed: u64,
    /// Patience, in epochs, of every early-stopping rule. 0 disables them.
    pub early_stop_patience: usize,
    pub artifact_threshold_multiplier: f64,
    pub decision_threshold: f64,
    /// Warm the dataset classifier up on raw images instead of reconstructions.
    pub warmup_on_raw: bool,
    /// Linear learning-rate warm-up, in optimizer steps, for both optimizers
    /// of the adversarial stage. They start with empty moment estimates, and
    /// full-size first steps knock the pretrained auto-encoder off its minimum.
    pub adversarial_lr_warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: StageEpochs::default(),
            batch_size: 32,
            learning_rates: LearningRates::default(),
            optimizer: AdamWConfig::default(),
            loss_weights: LossWeights::default(),
            seed: 0,
            early_stop_patience: 5,
            artifact_threshold_multiplier: 3.0,
            decision_threshold: DEFAULT_THRESHOLD,
            warmup_on_raw: false,
            adversarial_lr_warmup_steps: 40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return err("batch_size must be at least 1".into());
        }
        for c in Component::ALL {
            let lr = self.learning_rates.get(c);
            if !(lr.is_finite() && lr > 0.0) {
                return err(format!("learning rate for {} must be positive, got {lr}", c.prefix()));
            }
        }
        let o = &self.optimizer;
        if !(o.weight_decay.is_finite() && o.weight_decay >= 0.0) {
            return err(format!("weight_decay must be nonnegative, got {}", o.weight_decay));
        }
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(o.eps.is_finite() && o.eps > 0.0) {
            return err(format!("optimizer eps must be positive, got {}", o.eps));
        }
        self.loss_weights
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let m = self.artifact_threshold_multiplier;
        if !(m.is_finite() && m >= 0.0) {
            return err(format!("artifact_threshold_multiplier must be nonnegative, got {m}"));
        }
        let t = self.decision_threshold;
        if !(0.0..=1.0).contains(&t) {
            return err(format!("decision_threshold must lie in [0, 1], got {t}"));
        }
        Ok(())
    }
}
