use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{Backbone, BlockSpec, HeadSpec};
use crate::nn::{Component, Graph, NodeId, ParamId, ParamStore, Scalar, Tensor};

pub(crate) const LEAK: f64 = 0.1;

fn he_uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        component: Component,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = store.register(
            format!("{}.{name}.weight", component.prefix()),
            component,
            he_uniform(rng, &[out_channels, in_channels, kernel, kernel], fan_in),
        );
        let bias = store.register(
            format!("{}.{name}.bias", component.prefix()),
            component,
            Tensor::zeros(&[out_channels]),
        );
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.conv2d(x, w, b)
    }
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        component: Component,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let weight = store.register(
            format!("{}.{name}.weight", component.prefix()),
            component,
            he_uniform(rng, &[outputs, inputs], inputs),
        );
        let bias = store.register(
            format!("{}.{name}.bias", component.prefix()),
            component,
            Tensor::zeros(&[outputs]),
        );
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        g.linear(x, w, b)
    }
}

/// One resolution level of a backbone, without the trailing downsampling.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    convs: Vec<Conv>,
    shortcut: Option<Conv>,
}

impl ConvBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        component: Component,
        name: &str,
        backbone: Backbone,
        in_channels: usize,
        spec: BlockSpec,
    ) -> Self {
        let convs = (0..spec.convs)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { spec.width };
                Conv::new(store, rng, component, &format!("{name}.conv{i}"), cin, spec.width, 3)
            })
            .collect();
        let shortcut = match backbone {
            Backbone::VggMini => None,
            Backbone::ResnetMini => Some(Conv::new(
                store,
                rng,
                component,
                &format!("{name}.shortcut"),
                in_channels,
                spec.width,
                1,
            )),
        };
        Self { convs, shortcut }
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().expect("block has convs").out_channels
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let mut h = x;
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, h);
            // the residual sum is activated after the merge
            if !(self.shortcut.is_some() && i == last) {
                h = g.leaky_relu(h, LEAK);
            }
        }
        if let Some(sc) = &self.shortcut {
            let s = sc.forward(g, x);
            let sum = g.add(h, s);
            h = g.leaky_relu(sum, LEAK);
        }
        h
    }
}

/// Convolutional trunk followed by global average pooling and an MLP head.
#[derive(Debug, Clone)]
pub struct Classifier {
    blocks: Vec<ConvBlock>,
    hidden: Vec<Dense>,
    output: Dense,
}

impl Classifier {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        component: Component,
        backbone: Backbone,
        blocks: &[BlockSpec],
        head: &HeadSpec,
    ) -> Self {
        let mut cin = 1;
        let blocks = blocks
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let b = ConvBlock::new(store, rng, component, &format!("block{i}"), backbone, cin, spec);
                cin = spec.width;
                b
            })
            .collect();
        let mut fin = cin;
        let hidden = head
            .hidden
            .iter()
            .enumerate()
            .map(|(i, &width)| {
                let d = Dense::new(store, rng, component, &format!("hidden{i}"), fin, width);
                fin = width;
                d
            })
            .collect();
        let output = Dense::new(store, rng, component, "output", fin, head.outputs);
        Self {
            blocks,
            hidden,
            output,
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn output(&self) -> &Dense {
        &self.output
    }

    /// `x` is already standardized; returns `(N, outputs)` logits.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> NodeId {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(g, h);
            h = g.max_pool2(h);
        }
        h = g.global_avg_pool(h);
        for d in &self.hidden {
            h = d.forward(g, h);
            h = g.leaky_relu(h, LEAK);
        }
        self.output.forward(g, h)
    }
}
