use densegp::cnn::{AdamHyper, NetworkConfig};
use densegp::features::{Extractor, WaveletConfig};
use densegp::imagekit::{
    generate_synthetic_dataset, Class, Dataset, ImageTensor, LabeledImage, SplitTag, SynthConfig,
};
use densegp::linalg::Matrix;
use densegp::pipeline::{
    evaluate, export_report, split_dataset, train_densenet_gp, train_feature_gp, train_joint,
    FeatureGpConfig, LinearBackbone, SplitPolicy, TrainConfig, TrainedModel, CURVES_FILE,
    METRICS_FILE,
};
use densegp::rng::stream_rng;
use rand::Rng;

fn small_synth(seed: u64) -> Dataset<f64> {
    generate_synthetic_dataset(&SynthConfig {
        samples_per_class: 24,
        image_size: 16,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 12,
        seed: 5,
        network: NetworkConfig {
            input_size: 16,
            ..NetworkConfig::default()
        },
        refit_gp_every: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_features_reach_full_training_accuracy() {
    // Two Gaussian blobs in 3-D, one per class, shifted along the first axis.
    let mut rng = stream_rng(11, 0, 0);
    let mut blob = |n: usize| {
        let mut x = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            let class = (i % 2) as f64;
            x.push(if class == 1.0 { 1.5 } else { -1.5 } + rng.random_range(-0.5..0.5));
            x.push(rng.random_range(-1.0..1.0));
            x.push(rng.random_range(-1.0..1.0));
            t.push(class);
        }
        (Matrix::from_row_major(n, 3, x).unwrap(), t)
    };
    let (xtr, ttr) = blob(40);
    let (xte, tte) = blob(20);
    let mut backbone = LinearBackbone::new(xtr, xte, 1.0, AdamHyper::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        batch_size: 16,
        ..TrainConfig::default()
    };
    let out = train_joint(&mut backbone, &ttr, &tte, &cfg).unwrap();
    assert_eq!(out.epochs.len(), 5);
    assert!(out.epochs.iter().any(|e| e.train_acc == 1.0));
    assert_eq!(out.train_accuracy, 1.0);
    assert!(out
        .epochs
        .iter()
        .all(|e| e.loss.is_some_and(f64::is_finite)));
}

#[test]
fn zero_epochs_gives_initial_network_and_empty_curves() {
    let ds = small_synth(1);
    let split = split_dataset(&ds, &SplitPolicy::default()).unwrap();
    let cfg = small_config(0);
    let (model, metrics) = train_densenet_gp(&split, &cfg).unwrap();
    assert!(metrics.epochs.is_empty());
    assert_eq!(metrics.last_batch_train_accuracy, None);
    let fresh = densegp::cnn::NetworkParams::<f64>::init(&cfg.network, cfg.seed).unwrap();
    assert_eq!(model.network, fresh);
    assert_eq!(model.gp.len(), split.train.len());

    let dir = tempfile::tempdir().unwrap();
    export_report(&metrics, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
    assert_eq!(csv, "epoch,loss,train_acc,test_acc\n");
}

#[test]
fn training_is_deterministic_and_curves_are_complete() {
    let ds = small_synth(2);
    let split = split_dataset(&ds, &SplitPolicy::default()).unwrap();
    let cfg = small_config(3);
    let (m1, a) = train_densenet_gp(&split, &cfg).unwrap();
    let (m2, b) = train_densenet_gp(&split, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(m1.network, m2.network);
    assert_eq!(a.epochs.len(), 3);
    for e in &a.epochs {
        assert!(e.loss.is_some_and(f64::is_finite));
        assert!((0.0..=1.0).contains(&e.train_acc) && (0.0..=1.0).contains(&e.test_acc));
    }
    let last = a.last_batch_train_accuracy.unwrap();
    assert!(
        a.train_accuracy >= last - 0.05,
        "{} vs {last}",
        a.train_accuracy
    );

    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export_report(&a, d1.path()).unwrap();
    export_report(&b, d2.path()).unwrap();
    for f in [METRICS_FILE, CURVES_FILE] {
        assert_eq!(
            std::fs::read(d1.path().join(f)).unwrap(),
            std::fs::read(d2.path().join(f)).unwrap()
        );
    }
    let rows = std::fs::read_to_string(d1.path().join(CURVES_FILE)).unwrap();
    assert_eq!(rows.lines().count(), 4);
}

#[test]
fn poisoned_test_images_leave_training_untouched() {
    let ds = small_synth(3);
    let mut poisoned = ds.clone();
    let mut rng = stream_rng(99, 0, 0);
    for s in poisoned
        .samples
        .iter_mut()
        .filter(|s| s.split == SplitTag::Test)
    {
        for v in s.image.data_mut() {
            *v = rng.random_range(0.0..1.0);
        }
    }
    let cfg = small_config(2);
    let clean_split = split_dataset(&ds, &SplitPolicy::default()).unwrap();
    let dirty_split = split_dataset(&poisoned, &SplitPolicy::default()).unwrap();
    let (clean, cm) = train_densenet_gp(&clean_split, &cfg).unwrap();
    let (dirty, dm) = train_densenet_gp(&dirty_split, &cfg).unwrap();
    assert_eq!(clean.network, dirty.network);
    assert_eq!(clean.gp, dirty.gp);
    assert_eq!(cm.train_accuracy, dm.train_accuracy);
    let train_curve = |m: &densegp::pipeline::Metrics| -> Vec<(Option<f64>, f64)> {
        m.epochs.iter().map(|e| (e.loss, e.train_acc)).collect()
    };
    assert_eq!(train_curve(&cm), train_curve(&dm));
}

#[test]
fn saved_model_reproduces_predictions() {
    let ds = small_synth(4);
    let split = split_dataset(&ds, &SplitPolicy::default()).unwrap();
    let (model, _) = train_densenet_gp(&split, &small_config(1)).unwrap();
    let model = TrainedModel::DenseGp(model);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let loaded = TrainedModel::<f64>::load(dir.path()).unwrap();
    let images: Vec<&ImageTensor<f64>> = ds.samples.iter().map(|s| &s.image).collect();
    assert_eq!(
        model.predict(&images).unwrap(),
        loaded.predict(&images).unwrap()
    );

    let eval = evaluate(&loaded, split.test.samples()).unwrap();
    assert_eq!(eval.probabilities.len(), split.test.len());
    assert!((0.0..=1.0).contains(&eval.accuracy));
    assert!(evaluate(&loaded, &[]).is_err());
}

fn constant_dataset() -> Dataset<f64> {
    // 14 waste and 10 coal training images, all the same gray.
    let mut samples = Vec::new();
    for i in 0..30 {
        let class = if i < 14 || (24..27).contains(&i) {
            Class::Waste
        } else {
            Class::Coal
        };
        samples.push(LabeledImage {
            id: format!("c{i}"),
            image: ImageTensor::filled(16, 16, 3, 0.4),
            true_class: class,
            label: class,
            split: if i < 24 {
                SplitTag::Train
            } else {
                SplitTag::Test
            },
        });
    }
    Dataset { samples }
}

#[test]
fn constant_images_fall_back_to_the_majority_class() {
    let ds = constant_dataset();
    let split = split_dataset(&ds, &SplitPolicy::default()).unwrap();
    let mut cfg = FeatureGpConfig::new(Extractor::Msws(WaveletConfig::default()));
    cfg.input_size = 16;
    let (_, metrics) = train_feature_gp(&split, &cfg).unwrap();
    assert!((metrics.train_accuracy - 14.0 / 24.0).abs() < 1e-12);
    assert!((metrics.test_accuracy - 0.5).abs() < 1e-12);
}

fn class_mean_gap(features: &Matrix<f64>, targets: &[f64]) -> (f64, f64) {
    // Distance between class means and the largest within-class distance to
    // its own mean.
    let d = features.cols();
    let mean = |c: f64| -> Vec<f64> {
        let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] == c).collect();
        (0..d)
            .map(|j| rows.iter().map(|&i| features[(i, j)]).sum::<f64>() / rows.len() as f64)
            .collect()
    };
    let (m0, m1) = (mean(0.0), mean(1.0));
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let spread = (0..targets.len())
        .map(|i| dist(features.row(i), if targets[i] == 0.0 { &m0 } else { &m1 }))
        .fold(0.0, f64::max);
    (dist(&m0, &m1), spread)
}

#[test]
fn wavelet_features_separate_synthetic_textures() {
    let ds = generate_synthetic_dataset::<f64>(&SynthConfig {
        samples_per_class: 60,
        brightness_shift: 1.0,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let split = split_dataset(&ds, &SplitPolicy::default()).unwrap();
    let cfg = FeatureGpConfig::new(Extractor::Msws(WaveletConfig::default()));
    let (model, metrics) = train_feature_gp(&split, &cfg).unwrap();

    let model = TrainedModel::FeatureGp(model);
    let images: Vec<_> = split.train.samples().iter().map(|s| &s.image).collect();
    let (gap, spread) = class_mean_gap(&model.features(&images).unwrap(), &split.train.targets());
    assert!(
        gap > 0.5 * spread,
        "class means {gap} apart, spread {spread}"
    );
    assert!(metrics.test_accuracy >= 0.9, "{metrics:?}");

    let (_, again) = train_feature_gp(&split, &cfg).unwrap();
    assert_eq!(metrics, again);
}
