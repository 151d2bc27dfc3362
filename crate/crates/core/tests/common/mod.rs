#![allow(dead_code)]

use prepnet::data::{render_sample, ImageSample, PreprocessConfig, SampleSet, Split, SyntheticDomainSpec};
use prepnet::losses::{
    loss_covid_with_grad, loss_fool_with_grad, loss_pseu_with_grad, loss_rec_with_grad, Reduction,
};
use prepnet::model::{BlockSpec, HeadSpec, ModelConfig, PrepNet};
use prepnet::nn::{Component, Gradients, Graph, ParamId, Tensor};
use prepnet::train::{StageEpochs, TrainConfig, TrainData};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Confusion counts and balanced accuracy by enumerating every sample, with
/// BA kept as an exact ratio `(tp·N + tn·P) / (2·P·N)`.
pub struct BruteMetrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub ba_num: u64,
    pub ba_den: u64,
}

pub fn brute_metrics(labels: &[u8], preds: &[u8]) -> BruteMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for i in 0..labels.len() {
        if labels[i] == 1 && preds[i] == 1 {
            tp += 1;
        }
        if labels[i] == 0 && preds[i] == 1 {
            fp += 1;
        }
        if labels[i] == 0 && preds[i] == 0 {
            tn += 1;
        }
        if labels[i] == 1 && preds[i] == 0 {
            fn_ += 1;
        }
    }
    let (p, n) = (tp + fn_, tn + fp);
    BruteMetrics {
        tp,
        fp,
        tn,
        fn_,
        ba_num: tp * n + tn * p,
        ba_den: 2 * p * n,
    }
}

/// AUC as the probability that a random positive outscores a random
/// negative, by visiting every pair.
pub fn brute_auc(labels: &[u8], scores: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

/// Small config: two encoder blocks on 8×8 inputs.
pub fn two_block_config() -> ModelConfig {
    ModelConfig {
        input_size: (8, 8),
        encoder_blocks: vec![BlockSpec { convs: 1, width: 3 }, BlockSpec { convs: 1, width: 4 }],
        latent_channels: 4,
        dataset_head: HeadSpec {
            hidden: vec![5],
            outputs: 2,
        },
        task_head: HeadSpec {
            hidden: vec![5],
            outputs: 1,
        },
        ..Default::default()
    }
}

/// The four losses as functions of every parameter of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Rec,
    Pseu,
    Fool,
    Covid,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::Rec, LossKind::Pseu, LossKind::Fool, LossKind::Covid];
}

/// Forward the loss through the full network (the classifiers see the
/// reconstruction) and return its value with the gradient of every
/// parameter.
pub fn network_loss(
    model: &PrepNet<f64>,
    kind: LossKind,
    x: &Tensor<f64>,
    domains: &[usize],
    labels: &[u8],
) -> (f64, Gradients<f64>) {
    let mut g = Graph::new(&model.store, &Component::ALL);
    let xi = g.input_ref(x);
    let y = model.autoencode_node(&mut g, xi);
    let root = match kind {
        LossKind::Rec => {
            let (v, grad) = loss_rec_with_grad(x, g.value(y), Reduction::Mean).unwrap();
            g.loss(y, v, grad)
        }
        LossKind::Pseu => {
            let logits = model.dataset_logits_node(&mut g, y);
            let (v, grad) = loss_pseu_with_grad(domains, g.value(logits)).unwrap();
            g.loss(logits, v, grad)
        }
        LossKind::Fool => {
            let logits = model.dataset_logits_node(&mut g, y);
            let (v, grad) = loss_fool_with_grad(g.value(logits)).unwrap();
            g.loss(logits, v, grad)
        }
        LossKind::Covid => {
            let logit = model.task_logit_node(&mut g, y);
            let prob = g.sigmoid(logit);
            let (v, grad) = loss_covid_with_grad(labels, g.value(prob)).unwrap();
            g.loss(prob, v, grad)
        }
    };
    let value = g.value(root).data()[0];
    (value, g.backward(root))
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compare analytic gradients with central differences on up to
/// `per_tensor` coordinates of every parameter tensor.
///
/// Relative error is `|a − n| / max(|a|, |n|, floor)`; the floor keeps
/// coordinates whose true gradient is zero from dividing by rounding noise.
pub fn grad_check(
    model: &mut PrepNet<f64>,
    kind: LossKind,
    x: &Tensor<f64>,
    domains: &[usize],
    labels: &[u8],
    h: f64,
    per_tensor: usize,
    floor: f64,
) -> GradCheck {
    let (_, grads) = network_loss(model, kind, x, domains, labels);
    let ids: Vec<(ParamId, String, usize)> = model
        .store
        .iter()
        .map(|(id, p)| (id, p.name.clone(), p.value.len()))
        .collect();
    let mut out = GradCheck {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (id, name, len) in ids {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(&[len]));
        let stride = (len / per_tensor).max(1);
        for i in (0..len).step_by(stride).take(per_tensor) {
            let orig = model.store.value(id).data()[i];
            model.store.value_mut(id).data_mut()[i] = orig + h;
            let plus = network_loss(model, kind, x, domains, labels).0;
            model.store.value_mut(id).data_mut()[i] = orig - h;
            let minus = network_loss(model, kind, x, domains, labels).0;
            model.store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            out.checked += 1;
            if rel > out.max_rel_err {
                out.max_rel_err = rel;
                out.worst = format!("{name}[{i}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    out
}

/// Batch of four 8×8 images with smooth, well-separated pixel values.
pub fn four_image_batch() -> (Tensor<f64>, Vec<usize>, Vec<u8>) {
    let data: Vec<f64> = (0..4 * 64)
        .map(|i| 0.5 + 0.4 * ((i as f64) * 0.37).sin())
        .collect();
    (Tensor::from_vec(&[4, 1, 8, 8], data), vec![0, 1, 0, 1], vec![1, 0, 0, 1])
}

/// In-memory synthetic domains, labels balanced, without going through disk.
pub fn synthetic_set(spec: &SyntheticDomainSpec, seed: u64, split: Split) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    for d in 0..spec.domain_count() {
        for label in [0u8, 1] {
            for i in 0..spec.per_class {
                samples.push(ImageSample {
                    image: render_sample(spec, d, label, &mut rng),
                    task_label: Some(label),
                    dataset_id: d,
                    split,
                    sample_id: format!("d{d}_c{label}_{i}"),
                });
            }
        }
    }
    let config = PreprocessConfig {
        target_size: (spec.height, spec.width),
        equalize: false,
        ..Default::default()
    };
    SampleSet::from_samples(&samples, &config).unwrap()
}

/// Train/val data on 16×16 images, `per_class` training images per domain
/// and class.
pub fn small_train_data(per_class: usize, seed: u64) -> TrainData {
    let spec = SyntheticDomainSpec::preset(2, per_class, 16, 16);
    let val_spec = SyntheticDomainSpec {
        per_class: (per_class / 4).max(2),
        ..spec.clone()
    };
    TrainData {
        train: synthetic_set(&spec, seed, Split::Train),
        val: synthetic_set(&val_spec, seed + 1000, Split::Val),
    }
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        input_size: (16, 16),
        encoder_blocks: vec![BlockSpec { convs: 1, width: 4 }, BlockSpec { convs: 1, width: 8 }],
        latent_channels: 8,
        dataset_head: HeadSpec {
            hidden: vec![8],
            outputs: 2,
        },
        task_head: HeadSpec {
            hidden: vec![8],
            outputs: 1,
        },
        ..Default::default()
    }
}

pub fn short_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs: StageEpochs {
            ae_pretrain: epochs,
            warmup: epochs,
            adversarial: epochs,
            task: epochs,
        },
        batch_size: 16,
        seed: 3,
        ..Default::default()
    }
}
