use super::image::{prepare_image, PreprocessConfig};
use super::manifest::{DatasetManifest, ImageSample, ManifestEntry, Split};
use crate::error::{ensure, Error, Result};
use crate::nn::Tensor;

/// In-memory batch source: prepared images stacked as `(N, 1, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub images: Tensor<f32>,
    pub task_labels: Vec<Option<u8>>,
    pub dataset_ids: Vec<usize>,
    pub sample_ids: Vec<String>,
}

impl SampleSet {
    pub fn from_samples(samples: &[ImageSample], config: &PreprocessConfig) -> Result<Self> {
        let (h, w) = config.target_size;
        let mut pixels = Vec::with_capacity(samples.len() * h * w);
        for s in samples {
            s.image.ensure_unit_range()?;
            pixels.extend_from_slice(prepare_image(&s.image, config)?.pixels());
        }
        Ok(Self {
            images: Tensor::from_vec(&[samples.len(), 1, h, w], pixels),
            task_labels: samples.iter().map(|s| s.task_label).collect(),
            dataset_ids: samples.iter().map(|s| s.dataset_id).collect(),
            sample_ids: samples.iter().map(|s| s.sample_id.clone()).collect(),
        })
    }

    /// Decode and prepare every manifest entry accepted by `keep`.
    pub fn load(
        manifest: &DatasetManifest,
        config: &PreprocessConfig,
        keep: impl Fn(&ManifestEntry) -> bool,
    ) -> Result<Self> {
        let samples = manifest
            .entries
            .iter()
            .filter(|e| keep(e))
            .map(ManifestEntry::load)
            .collect::<Result<Vec<_>>>()?;
        Self::from_samples(&samples, config)
    }

    pub fn load_split(manifest: &DatasetManifest, config: &PreprocessConfig, split: Split) -> Result<Self> {
        Self::load(manifest, config, |e| e.split == split)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.images.dim(2), self.images.dim(3))
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather(indices),
            task_labels: indices.iter().map(|&i| self.task_labels[i]).collect(),
            dataset_ids: indices.iter().map(|&i| self.dataset_ids[i]).collect(),
            sample_ids: indices.iter().map(|&i| self.sample_ids[i].clone()).collect(),
        }
    }

    pub fn of_dataset(&self, dataset_id: usize) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.dataset_ids[i] == dataset_id).collect();
        self.subset(&idx)
    }

    pub fn with_images(&self, images: Tensor<f32>) -> Self {
        assert_eq!(images.dim(0), self.len());
        Self {
            images,
            ..self.clone()
        }
    }

    /// Task labels, failing if any sample is unlabeled.
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.task_labels
            .iter()
            .zip(&self.sample_ids)
            .map(|(l, id)| l.ok_or_else(|| Error::Validation(format!("sample {id} has no task label"))))
            .collect()
    }

    /// Labels of a set that must contain both classes.
    pub fn binary_labels(&self) -> Result<Vec<u8>> {
        let labels = self.labels()?;
        ensure!(
            labels.contains(&0) && labels.contains(&1),
            "task labels must contain both classes ({} samples)",
            labels.len()
        );
        Ok(labels)
    }

    pub fn datasets_present(&self) -> Vec<usize> {
        let mut ids = self.dataset_ids.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}
