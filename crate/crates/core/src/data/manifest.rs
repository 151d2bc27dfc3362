use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    fn parse(s: Option<&str>) -> Option<Self> {
        match s {
            None => Some(Split::Unassigned),
            Some("train") => Some(Split::Train),
            Some("val") => Some(Split::Val),
            Some("test") => Some(Split::Test),
            Some(_) => None,
        }
    }

    fn as_record(self) -> Option<&'static str> {
        match self {
            Split::Train => Some("train"),
            Split::Val => Some("val"),
            Split::Test => Some("test"),
            Split::Unassigned => None,
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub path: String,
    pub label: Option<u8>,
    pub dataset: String,
    pub split: Option<String>,
}

/// A reference to one image plus its labels; pixels are loaded on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// The record's `path` string as written in the manifest.
    pub sample_id: String,
    pub path: PathBuf,
    pub task_label: Option<u8>,
    pub dataset_id: usize,
    pub split: Split,
}

/// A decoded image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub image: Image,
    pub task_label: Option<u8>,
    pub dataset_id: usize,
    pub split: Split,
    pub sample_id: String,
}

impl ManifestEntry {
    pub fn load(&self) -> Result<ImageSample> {
        let image = Image::load_png(&self.path)?;
        Ok(ImageSample {
            image,
            task_label: self.task_label,
            dataset_id: self.dataset_id,
            split: self.split,
            sample_id: self.sample_id.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Dataset names indexed by dataset id.
    pub dataset_names: Vec<String>,
}

impl DatasetManifest {
    pub fn domain_count(&self) -> usize {
        self.dataset_names.len()
    }

    /// Tally per `(dataset_id, task_label)`.
    pub fn class_counts(&self) -> BTreeMap<(usize, Option<u8>), usize> {
        let mut counts = BTreeMap::new();
        for e in &self.entries {
            *counts.entry((e.dataset_id, e.task_label)).or_insert(0) += 1;
        }
        counts
    }

    pub fn split_sizes(&self) -> BTreeMap<Split, usize> {
        let mut sizes = BTreeMap::new();
        for e in &self.entries {
            *sizes.entry(e.split).or_insert(0) += 1;
        }
        sizes
    }

    pub fn dataset_id(&self, name: &str) -> Option<usize> {
        self.dataset_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.entries.is_empty(), "empty manifest");
        let mut seen = HashSet::new();
        for e in &self.entries {
            ensure!(seen.insert(&e.sample_id), "duplicate sample_id {}", e.sample_id);
            ensure!(
                e.dataset_id < self.domain_count(),
                "dataset id {} out of range for {} datasets",
                e.dataset_id,
                self.domain_count()
            );
        }
        Ok(())
    }

    /// Write as JSON lines; paths are written as their `sample_id`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.entries {
            let rec = ManifestRecord {
                path: e.sample_id.clone(),
                label: e.task_label,
                dataset: self.dataset_names[e.dataset_id].clone(),
                split: e.split.as_record().map(str::to_string),
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Parse `manifest.jsonl`, resolving relative image paths against the
/// manifest's directory and checking that every image decodes.
///
/// Dataset names map to contiguous ids in order of first appearance.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut entries = Vec::new();
    let mut dataset_names: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if let Some(l) = rec.label {
            if l > 1 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("label must be 0, 1 or null, got {l}"),
                });
            }
        }
        let split = Split::parse(rec.split.as_deref()).ok_or_else(|| Error::Parse {
            line: lineno,
            message: format!("unknown split {:?}", rec.split),
        })?;
        if !seen.insert(rec.path.clone()) {
            return Err(Error::Validation(format!(
                "duplicate sample_id {} at line {lineno}",
                rec.path
            )));
        }
        let dataset_id = match dataset_names.iter().position(|n| *n == rec.dataset) {
            Some(id) => id,
            None => {
                dataset_names.push(rec.dataset.clone());
                dataset_names.len() - 1
            }
        };
        let resolved = root.join(&rec.path);
        Image::load_png(&resolved)?;
        entries.push(ManifestEntry {
            sample_id: rec.path,
            path: resolved,
            task_label: rec.label,
            dataset_id,
            split,
        });
    }
    let manifest = DatasetManifest {
        entries,
        dataset_names,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Train/val/test fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        ensure!(
            parts.iter().all(|r| r.is_finite() && *r >= 0.0),
            "split ratios must be nonnegative, got {parts:?}"
        );
        ensure!(
            (parts.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "split ratios must sum to 1, got {parts:?}"
        );
        Ok(())
    }

    /// `(train, val, test)` sizes for a stratum of `n` samples.
    ///
    /// Train gets `floor(train·n)`; the remainder is divided in proportion
    /// to the val and test ratios, with the rounding surplus going to val.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64) + 1e-9).floor() as usize;
        let train = train.min(n);
        let rest = n - train;
        let vt = self.val + self.test;
        let val = if vt <= 0.0 {
            0
        } else {
            ((rest as f64 * self.val / vt) - 1e-9).ceil().max(0.0) as usize
        };
        let val = val.min(rest);
        (train, val, rest - val)
    }

    fn active(&self) -> usize {
        [self.train, self.val, self.test].iter().filter(|&&r| r > 0.0).count()
    }
}

/// Stratified split per `(dataset_id, task_label)`, deterministic per `seed`.
pub fn split_dataset(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    if let Some(e) = manifest.entries.iter().find(|e| e.split != Split::Unassigned) {
        return Err(Error::Validation(format!(
            "sample {} already has a split assigned",
            e.sample_id
        )));
    }
    let mut strata: BTreeMap<(usize, Option<u8>), Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        strata.entry((e.dataset_id, e.task_label)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = manifest.clone();
    for ((dataset, label), mut idx) in strata {
        idx.shuffle(&mut rng);
        if idx.len() < ratios.active() {
            warn!(
                "stratum (dataset {dataset}, label {label:?}) has {} samples for {} splits; assigning all to train",
                idx.len(),
                ratios.active()
            );
            for &i in &idx {
                out.entries[i].split = Split::Train;
            }
            continue;
        }
        let (train, val, _) = ratios.sizes(idx.len());
        for (pos, &i) in idx.iter().enumerate() {
            out.entries[i].split = if pos < train {
                Split::Train
            } else if pos < train + val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}
