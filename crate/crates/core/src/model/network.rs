use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, SkipMerge};
use super::layers::{Classifier, Conv, ConvBlock, LEAK};
use crate::error::{ensure, Result};
use crate::nn::{sigmoid, Component, Graph, NodeId, ParamStore, Scalar, Tensor};

/// Encoder feature maps kept for the decoder's skip connections, shallowest first.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<NodeId>,
}

impl FeaturePyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    blocks: Vec<ConvBlock>,
    bottleneck: Conv,
}

impl Encoder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, config: &ModelConfig) -> Self {
        let c = Component::Encoder;
        let mut cin = 1;
        let blocks = config
            .encoder_blocks
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let b = ConvBlock::new(store, rng, c, &format!("block{i}"), config.backbone, cin, spec);
                cin = spec.width;
                b
            })
            .collect();
        let bottleneck = Conv::new(store, rng, c, "bottleneck", cin, config.latent_channels, 3);
        Self { blocks, bottleneck }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Returns the bottleneck activation and the per-block features.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> (NodeId, FeaturePyramid) {
        let mut levels = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, h);
            levels.push(h);
            h = g.max_pool2(h);
        }
        let z = self.bottleneck.forward(g, h);
        let z = g.leaky_relu(z, LEAK);
        (z, FeaturePyramid { levels })
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    up: Conv,
    convs: Vec<Conv>,
    merge_channels: usize,
}

/// Mirror of the encoder: one block per encoder block, each upsampling by 2
/// and merging the matching skip feature at its input.
#[derive(Debug, Clone)]
pub struct Decoder {
    /// Deepest level first.
    blocks: Vec<DecoderBlock>,
    merge: SkipMerge,
    output: Conv,
}

impl Decoder {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, config: &ModelConfig) -> Self {
        let c = Component::Decoder;
        let mut cin = config.latent_channels;
        let mut blocks = Vec::new();
        for (level, spec) in config.encoder_blocks.iter().enumerate().rev() {
            let up = Conv::new(store, rng, c, &format!("block{level}.up"), cin, spec.width, 3);
            let merge_channels = match config.skip_merge {
                SkipMerge::Concatenate => 2 * spec.width,
                SkipMerge::Add => spec.width,
            };
            let convs = (0..spec.convs)
                .map(|i| {
                    let ci = if i == 0 { merge_channels } else { spec.width };
                    Conv::new(store, rng, c, &format!("block{level}.conv{i}"), ci, spec.width, 3)
                })
                .collect();
            blocks.push(DecoderBlock {
                up,
                convs,
                merge_channels,
            });
            cin = spec.width;
        }
        let output = Conv::new(store, rng, c, "output", cin, 1, 1);
        Self {
            blocks,
            merge: config.skip_merge,
            output,
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Channel count entering each decoder block after the skip merge, deepest first.
    pub fn merge_channels(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.merge_channels).collect()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, z: NodeId, skips: &FeaturePyramid) -> NodeId {
        assert_eq!(skips.depth(), self.blocks.len(), "pyramid depth must match decoder depth");
        let mut h = z;
        for (block, &skip) in self.blocks.iter().zip(skips.levels.iter().rev()) {
            h = g.upsample2(h);
            h = block.up.forward(g, h);
            h = g.leaky_relu(h, LEAK);
            h = match self.merge {
                SkipMerge::Concatenate => g.concat_channels(h, skip),
                SkipMerge::Add => g.add(h, skip),
            };
            for conv in &block.convs {
                h = conv.forward(g, h);
                h = g.leaky_relu(h, LEAK);
            }
        }
        let out = self.output.forward(g, h);
        g.sigmoid(out)
    }
}

/// Standardization applied at the classifiers' input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for InputNorm {
    fn default() -> Self {
        let d = crate::data::PreprocessConfig::default();
        Self {
            mean: d.norm_mean,
            std: d.norm_std,
        }
    }
}

/// All four components: auto-encoder (encoder + decoder), dataset
/// classifier and task classifier, over one shared parameter store.
#[derive(Debug, Clone)]
pub struct PrepNet<T: Scalar> {
    config: ModelConfig,
    norm: InputNorm,
    pub store: ParamStore<T>,
    encoder: Encoder,
    decoder: Decoder,
    dataset_classifier: Classifier,
    task_classifier: Classifier,
}

/// Independent initialization stream per component.
fn component_rng(seed: u64, component: Component) -> ChaCha8Rng {
    let salt = match component {
        Component::Encoder => 0x5eed_0001,
        Component::Decoder => 0x5eed_0002,
        Component::DatasetClassifier => 0x5eed_0003,
        Component::TaskClassifier => 0x5eed_0004,
    };
    ChaCha8Rng::seed_from_u64(seed ^ (salt << 32))
}

const INFER_CHUNK: usize = 64;

impl<T: Scalar> PrepNet<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, &mut component_rng(seed, Component::Encoder), config);
        let decoder = Decoder::new(&mut store, &mut component_rng(seed, Component::Decoder), config);
        let dataset_classifier = Classifier::new(
            &mut store,
            &mut component_rng(seed, Component::DatasetClassifier),
            Component::DatasetClassifier,
            config.backbone,
            &config.encoder_blocks,
            &config.dataset_head,
        );
        let task_classifier = Classifier::new(
            &mut store,
            &mut component_rng(seed, Component::TaskClassifier),
            Component::TaskClassifier,
            config.backbone,
            &config.encoder_blocks,
            &config.task_head,
        );
        Ok(Self {
            config: config.clone(),
            norm: InputNorm::default(),
            store,
            encoder,
            decoder,
            dataset_classifier,
            task_classifier,
        })
    }

    pub fn with_input_norm(mut self, norm: InputNorm) -> Self {
        self.norm = norm;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_norm(&self) -> InputNorm {
        self.norm
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn dataset_classifier(&self) -> &Classifier {
        &self.dataset_classifier
    }

    pub fn task_classifier(&self) -> &Classifier {
        &self.task_classifier
    }

    /// Re-draw one component's parameters from `seed`.
    pub fn reinitialize(&mut self, component: Component, seed: u64) -> Result<()> {
        let fresh = Self::build(&self.config, seed)?;
        self.store.copy_component_from(&fresh.store, component);
        Ok(())
    }

    pub fn component_hash(&self, component: Component) -> String {
        self.store.component_hash(component)
    }

    pub fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let (h, w) = self.config.input_size;
        let s = batch.shape();
        ensure!(
            s.len() == 4 && s[1] == 1 && s[2] == h && s[3] == w,
            "batch shape {s:?} does not match model input (N, 1, {h}, {w})"
        );
        Ok(())
    }

    pub fn autoencode_node(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let (z, pyramid) = self.encoder.forward(g, x);
        self.decoder.forward(g, z, &pyramid)
    }

    fn standardize(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        g.affine(x, self.norm.mean, 1.0 / self.norm.std)
    }

    /// `(N, K)` dataset logits for images in `[0, 1]`.
    pub fn dataset_logits_node(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let s = self.standardize(g, x);
        self.dataset_classifier.forward(g, s)
    }

    /// `(N, 1)` task logits for images in `[0, 1]`.
    pub fn task_logit_node(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let s = self.standardize(g, x);
        self.task_classifier.forward(g, s)
    }

    fn chunked(&self, batch: &Tensor<T>, f: impl Fn(&mut Graph<'_, T>, NodeId) -> NodeId) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let n = batch.dim(0);
        let mut parts = Vec::new();
        for start in (0..n).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..(start + INFER_CHUNK).min(n)).collect();
            let mut g = Graph::inference(&self.store);
            let x = g.input(batch.gather(&idx));
            let y = f(&mut g, x);
            parts.push(g.value(y).clone());
        }
        if parts.is_empty() {
            let mut shape = batch.shape().to_vec();
            shape[0] = 0;
            return Ok(Tensor::zeros(&shape));
        }
        Ok(Tensor::stack_rows(&parts))
    }

    /// Auto-encoder output for a `(N, 1, H, W)` batch; values in `[0, 1]`.
    pub fn reconstruct(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.chunked(batch, |g, x| self.autoencode_node(g, x))
    }

    pub fn classify_dataset(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.chunked(batch, |g, x| self.dataset_logits_node(g, x))
    }

    /// Positive-class probabilities, one per image.
    pub fn classify_task(&self, batch: &Tensor<T>) -> Result<Vec<T>> {
        let logits = self.chunked(batch, |g, x| self.task_logit_node(g, x))?;
        Ok(logits.data().iter().map(|&v| sigmoid(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> PrepNet<U> {
        PrepNet {
            config: self.config.clone(),
            norm: self.norm,
            store: self.store.cast(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            dataset_classifier: self.dataset_classifier.clone(),
            task_classifier: self.task_classifier.clone(),
        }
    }
}
