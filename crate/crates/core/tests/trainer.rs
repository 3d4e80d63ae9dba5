use anatomy_net::augment::AugmentConfig;
use anatomy_net::model::{LayerSpec, Model, ModelSpec};
use anatomy_net::nn::softmax_cross_entropy;
use anatomy_net::trainer::{evaluate, run_to_completion, train, Control, ImageSet, RunOutputs, TrainConfig};
use anatomy_net::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_images(n: usize, side: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Tensor::from_fn([1, side, side], |_| rng.random_range(0.0..1.0)))
        .collect()
}

fn small_spec(side: usize, classes: usize) -> ModelSpec {
    small_spec_with(side, classes, Some(0.5))
}

fn small_spec_with(side: usize, classes: usize, dropout: Option<f64>) -> ModelSpec {
    ModelSpec {
        input_shape: [1, side, side],
        num_classes: classes,
        layers: vec![
            LayerSpec::conv(4),
            LayerSpec::pool(),
            LayerSpec::dense(8, dropout),
            LayerSpec::Softmax { classes },
        ],
        ..ModelSpec::annex(classes)
    }
}

fn quick_config(epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn single_class_is_learned_quickly() {
    let set = ImageSet::new(noise_images(64, 16, 1), vec![0; 64], 4).unwrap();
    let mut model: Model<f32> = Model::build(small_spec_with(16, 4, None), 2).unwrap();
    let cfg = quick_config(20, 16);
    let history = train(
        &mut model,
        &set,
        &set,
        &cfg,
        &AugmentConfig::disabled([16, 16]),
        &RunOutputs::default(),
        &mut run_to_completion,
    )
    .unwrap();
    let last = history.epochs.last().unwrap();
    assert!(last.train_loss < 0.05, "loss {}", last.train_loss);
    assert_eq!(last.test_acc, 1.0);
}

#[test]
fn one_step_per_batch() {
    for (n, b) in [(10, 4), (12, 4), (2, 8), (9, 4), (13, 3)] {
        let set = ImageSet::new(noise_images(n, 8, n as u64), (0..n).map(|i| i % 2).collect(), 2).unwrap();
        let mut model: Model<f32> = Model::build(small_spec(8, 2), 3).unwrap();
        let cfg = quick_config(2, b);
        train(
            &mut model,
            &set,
            &set,
            &cfg,
            &AugmentConfig::disabled([8, 8]),
            &RunOutputs::default(),
            &mut run_to_completion,
        )
        .unwrap();
        // the convolutional batch norm sees 64 values per channel even for one
        // image, so its counter advances exactly once per step
        let (_, conv_stats) = model.running_stats().iter().next().unwrap();
        assert_eq!(conv_stats.updates as usize, 2 * n.div_ceil(b), "N={n} B={b}");
        assert_eq!(cfg.steps_per_epoch(n), n.div_ceil(b));
    }
}

#[test]
fn batch_size_one_is_rejected_with_dense_batch_norm() {
    let set = ImageSet::new(noise_images(4, 8, 1), vec![0, 1, 0, 1], 2).unwrap();
    let mut model: Model<f32> = Model::build(small_spec(8, 2), 3).unwrap();
    let err = train(
        &mut model,
        &set,
        &set,
        &quick_config(1, 1),
        &AugmentConfig::disabled([8, 8]),
        &RunOutputs::default(),
        &mut run_to_completion,
    )
    .unwrap_err();
    assert!(err.to_string().contains("batch size 1"), "{err}");
}

#[test]
fn evaluation_leaves_model_untouched() {
    let set = ImageSet::new(noise_images(12, 8, 4), (0..12).map(|i| i % 3).collect(), 3).unwrap();
    let mut model: Model<f32> = Model::build(small_spec(8, 3), 5).unwrap();
    model
        .forward_train(&Tensor::from_fn([4, 1, 8, 8], |i| (i % 7) as f32 * 0.1), 0)
        .unwrap();
    let before = model.clone();
    let a = evaluate(&model, &set, 5).unwrap();
    let b = evaluate(&model, &set, 12).unwrap();
    assert_eq!(model.params(), before.params());
    assert_eq!(model.running_stats(), before.running_stats());
    assert_eq!(a, b, "batch size must not change results");
    assert_eq!(a.total(), 12);
}

#[test]
fn observer_can_stop_early() {
    let set = ImageSet::new(noise_images(8, 8, 6), vec![1; 8], 2).unwrap();
    let mut model: Model<f32> = Model::build(small_spec(8, 2), 7).unwrap();
    let mut seen = 0;
    let history = train(
        &mut model,
        &set,
        &set,
        &quick_config(10, 4),
        &AugmentConfig::disabled([8, 8]),
        &RunOutputs::default(),
        &mut |r, _| {
            seen += 1;
            Ok(if r.epoch == 2 { Control::Stop } else { Control::Continue })
        },
    )
    .unwrap();
    assert_eq!(history.epochs.len(), 3);
    assert_eq!(seen, 3);
}

#[test]
fn untrained_annex_model_is_at_chance() {
    // balanced labels, so any fixed prediction rule scores exactly 1/24 in expectation
    let n = 504;
    let mut model: Model<f32> = Model::build(ModelSpec::annex(24), 8).unwrap();
    let images = noise_images(n, 128, 9);
    model
        .forward_train(
            &Tensor::from_fn([8, 1, 128, 128], |i| images[i / (128 * 128)].data()[i % (128 * 128)]),
            1,
        )
        .unwrap();
    let labels: Vec<usize> = (0..n).map(|i| i % 24).collect();
    let set = ImageSet::new(images, labels.clone(), 24).unwrap();
    let eval = evaluate(&model, &set, 64).unwrap();
    assert!((eval.accuracy - 1.0 / 24.0).abs() <= 0.05, "accuracy {}", eval.accuracy);
    let first = Tensor::from_fn([1, 1, 128, 128], |i| set.images[0].data()[i]);
    let (loss, _) = softmax_cross_entropy(&model.forward_infer(&first).unwrap(), &labels[..1]).unwrap();
    assert!(loss.is_finite());
}
