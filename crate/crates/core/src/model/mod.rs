mod checkpoint;
mod config;
mod layers;
mod network;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, ModelWeights, NamedTensor, FORMAT_VERSION, MAGIC,
};
pub use config::{Backbone, BlockSpec, HeadSpec, ModelConfig, SkipMerge};
pub use layers::{Classifier, Conv, ConvBlock, Dense};
pub use network::{Decoder, Encoder, FeaturePyramid, InputNorm, PrepNet};
