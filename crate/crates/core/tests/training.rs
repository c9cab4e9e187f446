use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tpg_dnn::data::{generate_synthetic, Behavior, ExampleRecord, GeneratorConfig, Labels};
use tpg_dnn::eval::{
    evaluate, predict_all, report_from_outputs, run_baseline, write_metrics_csv, Variant,
};
use tpg_dnn::model::{InputSpec, ModelConfig, MultiTaskModel};
use tpg_dnn::train::{train, Checkpoint, RunConfig};
use tpg_dnn::Error;

fn small_config(epochs: usize) -> RunConfig {
    let mut config = RunConfig {
        data: GeneratorConfig {
            train_size: 256,
            test_size: 128,
            ..GeneratorConfig::default()
        },
        model: ModelConfig {
            trunk_width: 16,
            ..ModelConfig::default()
        },
        ..RunConfig::default()
    };
    config.train.epochs = epochs;
    config.train.batch_size = 64;
    config
}

/// One binary field; every label equals the field value when `separable`,
/// otherwise the labels are coin flips.
fn toy(n: usize, separable: bool, seed: u64) -> Vec<ExampleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let x: u8 = rng.random_range(0..2);
            let mut label = || if separable { x } else { rng.random_range(0..2) };
            let labels = Labels {
                browse: label(),
                collect: label(),
                cart: label(),
                purchase: label(),
            };
            ExampleRecord {
                fields: vec![x as usize],
                short_seq: vec![vec![0]],
                long_seq: vec![vec![0]],
                labels,
                order_volume: u32::from(labels.purchase) * 2,
                truth: None,
            }
        })
        .collect()
}

fn toy_run(separable: bool) -> f64 {
    let mut config = RunConfig::default();
    config.train.variant = Variant::Lr;
    config.train.epochs = 3;
    config.train.learning_rate = 0.05;
    let input = InputSpec {
        cardinalities: vec![2],
        short_len: 1,
        long_len: 1,
        channels: 1,
    };
    let run = train(&config, &input, &toy(2000, separable, 1)).unwrap();
    let report = evaluate("lr", &run.model, &toy(10_000, separable, 2), 0.5).unwrap();
    report.task(Behavior::Purchase).auc
}

#[test]
fn linear_baseline_separates_a_separable_toy() {
    assert!(toy_run(true) > 0.95);
}

#[test]
fn linear_baseline_is_at_chance_on_noise() {
    assert!((toy_run(false) - 0.5).abs() < 0.03);
}

#[test]
fn zero_epochs_return_the_initial_model() {
    let config = small_config(0);
    let input = InputSpec::from_generator(&config.data);
    let data = generate_synthetic(&config.data, 1).unwrap();
    let run = train(&config, &input, &data.train).unwrap();
    let fresh = config
        .train
        .variant
        .build(&config.model, &input, config.train.loss_scheme, config.train.seed)
        .unwrap();
    assert!(run.history.is_empty());
    assert_eq!(run.model.params().entries(), fresh.params().entries());
}

#[test]
fn training_rejects_an_empty_set() {
    let config = small_config(1);
    let input = InputSpec::from_generator(&config.data);
    assert!(matches!(train(&config, &input, &[]), Err(Error::Input(_))));
}

#[test]
fn training_lowers_the_loss() {
    let config = small_config(4);
    let input = InputSpec::from_generator(&config.data);
    let data = generate_synthetic(&config.data, 2).unwrap();
    let run = train(&config, &input, &data.train).unwrap();
    let first = run.history.first().unwrap().loss.total;
    let last = run.history.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
    assert_eq!(run.history.len(), 4);
}

#[test]
fn purchase_loss_falls_over_the_first_epochs_on_default_data() {
    let falls = |seed: u64| {
        let mut config = RunConfig::default();
        config.train.seed = seed;
        config.train.epochs = 3;
        config.data.test_size = 0;
        let data = generate_synthetic(&config.data, seed).unwrap();
        let run = train(&config, &InputSpec::from_generator(&config.data), &data.train).unwrap();
        let pbr: Vec<f64> = run.history.iter().map(|r| r.loss.pbr).collect();
        pbr.windows(2).all(|w| w[1] < w[0])
    };
    assert!([7, 8, 9].into_iter().any(falls));
}

#[test]
fn every_variant_restores_from_its_checkpoint() {
    let config = small_config(1);
    let data = generate_synthetic(&config.data, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let base = run_baseline(variant, &data.train, &data.test, &config).unwrap();
        let path = dir.path().join(format!("{}.json", variant.label()));
        base.run.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, base.run.checkpoint);
        let restored = loaded.restore().unwrap();
        assert_eq!(
            predict_all(&restored, &data.test).unwrap(),
            predict_all(&base.run.model, &data.test).unwrap()
        );
    }
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"format\": \"something-else\"}").unwrap();
    assert!(Checkpoint::load(&path).is_err());
    assert!(Checkpoint::load(&dir.path().join("missing.json")).is_err());
}

#[test]
fn metrics_csv_is_byte_stable() {
    let config = small_config(1);
    let data = generate_synthetic(&config.data, 4).unwrap();
    let run = run_baseline(Variant::Lr, &data.train, &data.test, &config).unwrap();
    let outputs = predict_all(&run.run.model, &data.test).unwrap();
    let csv = || {
        let report = report_from_outputs("lr", &outputs, &data.test, 0.5).unwrap();
        let mut bytes = Vec::new();
        write_metrics_csv(&[report.clone(), report], &mut bytes).unwrap();
        bytes
    };
    let first = csv();
    assert_eq!(first, csv());
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 5);
}

#[test]
fn variants_share_one_dataset_and_featurization() {
    let config = small_config(1);
    let data = generate_synthetic(&config.data, 5).unwrap();
    for variant in Variant::ALL {
        let run = run_baseline(variant, &data.train, &data.test, &config).unwrap();
        assert_eq!(run.run.checkpoint.input, InputSpec::from_generator(&config.data));
        assert_eq!(run.report.classification.len(), 4);
    }
}
