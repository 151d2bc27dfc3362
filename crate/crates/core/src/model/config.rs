use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Encoder block recipe registered for every network component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Backbone {
    /// Plain stacked 3×3 convolutions.
    #[serde(rename = "vgg-mini")]
    VggMini,
    /// 3×3 convolutions with a 1×1 projection shortcut per block.
    #[serde(rename = "resnet-mini")]
    ResnetMini,
}

impl Backbone {
    pub const ALL: [Backbone; 2] = [Backbone::VggMini, Backbone::ResnetMini];

    pub fn tag(self) -> &'static str {
        match self {
            Backbone::VggMini => "vgg-mini",
            Backbone::ResnetMini => "resnet-mini",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.tag() == tag)
            .ok_or_else(|| Error::Config(format!("unknown backbone {tag:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMerge {
    #[default]
    Concatenate,
    Add,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockSpec {
    pub convs: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `(height, width)`.
    pub input_size: (usize, usize),
    pub encoder_blocks: Vec<BlockSpec>,
    pub latent_channels: usize,
    pub skip_merge: SkipMerge,
    /// Output width is the number of datasets `K`.
    pub dataset_head: HeadSpec,
    /// Output width must be 1 (a single logit).
    pub task_head: HeadSpec,
    #[serde(rename = "backbone_name")]
    pub backbone: Backbone,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (32, 32),
            encoder_blocks: vec![
                BlockSpec { convs: 1, width: 8 },
                BlockSpec { convs: 1, width: 16 },
                BlockSpec { convs: 1, width: 32 },
            ],
            latent_channels: 32,
            skip_merge: SkipMerge::Concatenate,
            dataset_head: HeadSpec {
                hidden: vec![16],
                outputs: 2,
            },
            task_head: HeadSpec {
                hidden: vec![16],
                outputs: 1,
            },
            backbone: Backbone::VggMini,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        let (h, w) = self.input_size;
        let blocks = self.encoder_blocks.len();
        if blocks == 0 {
            return err("at least one encoder block is required".into());
        }
        if blocks >= usize::BITS as usize {
            return err(format!("{blocks} encoder blocks is too many"));
        }
        let factor = 1usize << blocks;
        if h == 0 || w == 0 || h % factor != 0 || w % factor != 0 {
            return err(format!(
                "input size {h}x{w} must be a positive multiple of 2^{blocks} = {factor}"
            ));
        }
        if self.encoder_blocks.iter().any(|b| b.convs == 0 || b.width == 0) {
            return err("every encoder block needs at least one conv and a positive width".into());
        }
        if self.latent_channels == 0 {
            return err("latent_channels must be positive".into());
        }
        if self.dataset_head.outputs < 2 {
            return err(format!(
                "dataset head needs K >= 2 outputs, got {}",
                self.dataset_head.outputs
            ));
        }
        if self.task_head.outputs != 1 {
            return err(format!(
                "task head must have exactly one output logit, got {}",
                self.task_head.outputs
            ));
        }
        if self
            .dataset_head
            .hidden
            .iter()
            .chain(&self.task_head.hidden)
            .any(|&w| w == 0)
        {
            return err("hidden widths must be positive".into());
        }
        Ok(())
    }

    pub fn domain_count(&self) -> usize {
        self.dataset_head.outputs
    }

    /// Spatial size at the bottleneck.
    pub fn bottleneck_size(&self) -> (usize, usize) {
        let f = 1usize << self.encoder_blocks.len();
        (self.input_size.0 / f, self.input_size.1 / f)
    }

    /// First 8 bytes (little-endian) of SHA-256 over the canonical JSON form.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("model config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}
