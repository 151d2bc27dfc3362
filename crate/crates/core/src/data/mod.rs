//! Image ingestion, fixed preprocessing, splitting and the synthetic
//! multi-domain benchmark.

mod image;
mod manifest;
mod samples;
mod synthetic;

pub use image::{
    equalize_histogram, normalize, prepare_image, preprocess_image, resize_bilinear, Image, PreprocessConfig,
};
pub use manifest::{
    load_manifest, split_dataset, DatasetManifest, ImageSample, ManifestEntry, ManifestRecord, Split, SplitRatios,
};
pub use samples::SampleSet;
pub use synthetic::{generate_synthetic_benchmark, render_sample, DomainNuisance, SyntheticDomainSpec};
