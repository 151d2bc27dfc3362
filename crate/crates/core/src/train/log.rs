use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Step index within the stage, counting across epochs.
    pub step: usize,
    pub losses: LossBreakdown,
    /// Discriminator accuracy on the batch, for stages that train it.
    pub disc_accuracy: Option<f64>,
    pub wall_time_s: f64,
}

/// End-of-epoch summary. Training losses are means over the epoch's steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub train: LossBreakdown,
    pub train_disc_accuracy: Option<f64>,
    pub val_rec: Option<f64>,
    pub val_disc_accuracy: Option<f64>,
    pub val_ba: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step(StepRecord),
    Epoch(EpochRecord),
}

impl LogRecord {
    pub fn stage(&self) -> Stage {
        match self {
            LogRecord::Step(s) => s.stage,
            LogRecord::Epoch(e) => e.stage,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn push_step(&mut self, record: StepRecord) {
        self.records.push(LogRecord::Step(record));
    }

    pub fn push_epoch(&mut self, record: EpochRecord) {
        self.records.push(LogRecord::Epoch(record));
    }

    pub fn extend(&mut self, other: TrainLog) {
        self.records.extend(other.records);
    }

    pub fn steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step(s) => Some(s),
            LogRecord::Epoch(_) => None,
        })
    }

    pub fn epochs(&self) -> impl Iterator<Item = &EpochRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Epoch(e) => Some(e),
            LogRecord::Step(_) => None,
        })
    }

    pub fn epochs_of(&self, stage: Stage) -> impl Iterator<Item = &EpochRecord> {
        self.epochs().filter(move |e| e.stage == stage)
    }

    /// Step records are strictly increasing in `(stage, epoch, step)` and
    /// each epoch summary follows the steps of its epoch.
    pub fn is_ordered(&self) -> bool {
        let mut last_step: Option<(Stage, usize, usize)> = None;
        let mut last_epoch: Option<(Stage, usize)> = None;
        for r in &self.records {
            match r {
                LogRecord::Step(s) => {
                    let key = (s.stage, s.epoch, s.step);
                    if last_step.is_some_and(|k| key <= k) || last_epoch.is_some_and(|k| (s.stage, s.epoch) <= k) {
                        return false;
                    }
                    last_step = Some(key);
                }
                LogRecord::Epoch(e) => {
                    let key = (e.stage, e.epoch);
                    if last_epoch.is_some_and(|k| key <= k) || last_step.is_some_and(|k| (k.0, k.1) > key) {
                        return false;
                    }
                    last_epoch = Some(key);
                }
            }
        }
        true
    }

    /// Keep only the records of stages strictly before `stage`.
    pub fn truncate_before(&mut self, stage: Stage) {
        self.records.retain(|r| r.stage() < stage);
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self { records })
    }
}
