use prepnet::model::{Backbone, BlockSpec, ModelConfig, PrepNet, SkipMerge};
use prepnet::nn::{Component, Graph, Tensor};
use prepnet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_batch(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(&[n, 1, h, w], (0..n * h * w).map(|_| rng.random::<f32>()).collect())
}

#[test]
fn bottleneck_is_input_over_two_to_the_blocks() {
    assert_eq!(ModelConfig::default().bottleneck_size(), (4, 4));
    let two = ModelConfig {
        encoder_blocks: vec![BlockSpec { convs: 1, width: 4 }; 2],
        ..Default::default()
    };
    assert_eq!(two.bottleneck_size(), (8, 8));
}

#[test]
fn indivisible_input_size_is_a_config_error() {
    let cfg = ModelConfig {
        input_size: (30, 32),
        ..Default::default()
    };
    assert!(matches!(PrepNet::<f32>::build(&cfg, 0), Err(Error::Config(_))));
}

#[test]
fn same_seed_same_parameters() {
    let cfg = ModelConfig::default();
    let a = PrepNet::<f32>::build(&cfg, 11).unwrap();
    let b = PrepNet::<f32>::build(&cfg, 11).unwrap();
    let c = PrepNet::<f32>::build(&cfg, 12).unwrap();
    for comp in Component::ALL {
        assert_eq!(a.component_hash(comp), b.component_hash(comp));
        assert_ne!(a.component_hash(comp), c.component_hash(comp));
    }
}

#[test]
fn concatenated_skips_double_the_merge_width() {
    let m = PrepNet::<f32>::build(&ModelConfig::default(), 0).unwrap();
    assert_eq!(m.decoder().merge_channels(), vec![64, 32, 16]);
    let add = ModelConfig {
        skip_merge: SkipMerge::Add,
        ..Default::default()
    };
    let m = PrepNet::<f32>::build(&add, 0).unwrap();
    assert_eq!(m.decoder().merge_channels(), vec![32, 16, 8]);
}

#[test]
fn decoder_depth_mirrors_encoder() {
    for blocks in 1..=4 {
        let cfg = ModelConfig {
            encoder_blocks: vec![BlockSpec { convs: 1, width: 4 }; blocks],
            ..Default::default()
        };
        let m = PrepNet::<f32>::build(&cfg, 0).unwrap();
        assert_eq!(m.encoder().depth(), blocks);
        assert_eq!(m.decoder().depth(), blocks);
        assert_eq!(m.dataset_classifier().depth(), blocks);
        assert_eq!(m.task_classifier().depth(), blocks);
    }
}

#[test]
fn reconstruction_shape_and_range() {
    for backbone in Backbone::ALL {
        for merge in [SkipMerge::Concatenate, SkipMerge::Add] {
            let cfg = ModelConfig {
                backbone,
                skip_merge: merge,
                ..Default::default()
            };
            let m = PrepNet::<f32>::build(&cfg, 5).unwrap();
            let x = random_batch(4, 32, 32, 1);
            let y = m.reconstruct(&x).unwrap();
            assert_eq!(y.shape(), &[4, 1, 32, 32]);
            assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn reconstruction_shape_over_config_family() {
    for (size, blocks) in [((16, 16), 2), ((32, 16), 3), ((24, 40), 3), ((64, 64), 4)] {
        let cfg = ModelConfig {
            input_size: size,
            encoder_blocks: vec![BlockSpec { convs: 1, width: 4 }; blocks],
            latent_channels: 4,
            ..Default::default()
        };
        let m = PrepNet::<f32>::build(&cfg, 0).unwrap();
        let x = random_batch(2, size.0, size.1, 2);
        assert_eq!(m.reconstruct(&x).unwrap().shape(), x.shape());
    }
}

#[test]
fn wrong_batch_shape_is_a_validation_error() {
    let m = PrepNet::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let x = random_batch(2, 16, 16, 0);
    assert!(matches!(m.reconstruct(&x), Err(Error::Validation(_))));
    assert!(matches!(m.classify_dataset(&x), Err(Error::Validation(_))));
    assert!(matches!(m.classify_task(&x), Err(Error::Validation(_))));
}

#[test]
fn reconstruction_gradient_reaches_every_autoencoder_parameter() {
    let m = PrepNet::<f64>::build(&ModelConfig::default(), 8).unwrap();
    let x = random_batch(2, 32, 32, 3).cast::<f64>();
    let mut g = Graph::new(&m.store, &Component::AUTOENCODER);
    let xi = g.input(x.clone());
    let y = m.autoencode_node(&mut g, xi);
    let (v, grad) = prepnet::losses::loss_rec_with_grad(&x, g.value(y), prepnet::losses::Reduction::Mean).unwrap();
    let root = g.loss(y, v, grad);
    let grads = g.backward(root);
    for id in m.store.ids_of(&Component::AUTOENCODER) {
        let gr = grads.get(id).unwrap_or_else(|| panic!("no gradient for {}", m.store.get(id).name));
        assert!(gr.data().iter().any(|&v| v != 0.0), "{} has zero gradient", m.store.get(id).name);
    }
    for id in m.store.ids_of(&[Component::DatasetClassifier, Component::TaskClassifier]) {
        assert!(grads.get(id).is_none());
    }
}

#[test]
fn dataset_logits_shape_and_softmax() {
    for k in [2, 3, 5] {
        let mut cfg = ModelConfig::default();
        cfg.dataset_head.outputs = k;
        let m = PrepNet::<f32>::build(&cfg, 1).unwrap();
        let logits = m.classify_dataset(&random_batch(4, 32, 32, 9)).unwrap();
        assert_eq!(logits.shape(), &[4, k]);
        for row in logits.data().chunks(k) {
            let s: f64 = prepnet::losses::log_softmax(row).iter().map(|&l| (l as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn zeroed_task_output_layer_gives_one_half() {
    let mut m = PrepNet::<f32>::build(&ModelConfig::default(), 1).unwrap();
    let out = m.task_classifier().output().clone();
    for id in [out.weight, out.bias] {
        m.store.value_mut(id).data_mut().fill(0.0);
    }
    let p = m.classify_task(&random_batch(8, 32, 32, 4)).unwrap();
    assert_eq!(p.len(), 8);
    assert!(p.iter().all(|&v| v == 0.5));
}

#[test]
fn task_probabilities_strictly_inside_unit_interval() {
    let m = PrepNet::<f32>::build(&ModelConfig::default(), 2).unwrap();
    let p = m.classify_task(&random_batch(8, 32, 32, 5)).unwrap();
    assert_eq!(p.len(), 8);
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn outputs_finite_under_input_fuzzing() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for backbone in Backbone::ALL {
        let cfg = ModelConfig {
            backbone,
            ..Default::default()
        };
        let m = PrepNet::<f32>::build(&cfg, rng.random()).unwrap();
        for _ in 0..5 {
            let scale = 10f32.powi(rng.random_range(-3..4));
            let n = rng.random_range(1..6);
            let data = (0..n * 1024).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
            let x = Tensor::from_vec(&[n, 1, 32, 32], data);
            assert!(m.reconstruct(&x).unwrap().all_finite());
            assert!(m.classify_dataset(&x).unwrap().all_finite());
            assert!(m.classify_task(&x).unwrap().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn empty_batch_is_accepted() {
    let m = PrepNet::<f32>::build(&ModelConfig::default(), 2).unwrap();
    let x = Tensor::<f32>::zeros(&[0, 1, 32, 32]);
    assert_eq!(m.reconstruct(&x).unwrap().shape(), &[0, 1, 32, 32]);
    assert!(m.classify_task(&x).unwrap().is_empty());
}

#[test]
fn large_batches_are_chunked_consistently() {
    let m = PrepNet::<f32>::build(&ModelConfig::default(), 2).unwrap();
    let x = random_batch(70, 32, 32, 6);
    let all = m.reconstruct(&x).unwrap();
    let tail = m.reconstruct(&x.gather(&[69])).unwrap();
    assert_eq!(&all.data()[69 * 1024..], tail.data());
}

#[test]
fn reinitialize_touches_one_component() {
    let mut m = PrepNet::<f32>::build(&ModelConfig::default(), 2).unwrap();
    let before: Vec<String> = Component::ALL.iter().map(|&c| m.component_hash(c)).collect();
    m.reinitialize(Component::TaskClassifier, 99).unwrap();
    for (i, &c) in Component::ALL.iter().enumerate() {
        assert_eq!(m.component_hash(c) == before[i], c != Component::TaskClassifier, "{c:?}");
    }
}
