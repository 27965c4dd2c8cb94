use tgl_core::dataset::{preprocess_all, read_trial_dir, write_trial_csv};
use tgl_core::trainer::mean_loss;
use tgl_core::{
    build_toy_hand, generate_dataset, load_checkpoint, save_checkpoint, AdamConfig, Dataset, GeneratorConfig,
    ModelName, Plant, PreprocessConfig, TrainConfig, Trainer,
};

#[test]
fn generated_trials_survive_csv_and_split_cleanly() {
    let topo = build_toy_hand();
    let cfg = GeneratorConfig::default();
    let plant = Plant::new(&topo, cfg.plant.clone()).unwrap();
    let trials = generate_dataset(&plant, &cfg, 4, 3, 5).unwrap();
    assert_eq!(trials.len(), 12);

    let dir = tempfile::tempdir().unwrap();
    for t in &trials {
        write_trial_csv(dir.path().join(format!("{}.csv", t.object_name)), t).unwrap();
    }
    let mut read = read_trial_dir(dir.path()).unwrap();
    read.sort_by(|a, b| a.object_name.cmp(&b.object_name));
    let mut expected = trials.clone();
    expected.sort_by(|a, b| a.object_name.cmp(&b.object_name));
    assert_eq!(read.len(), expected.len());
    for (r, e) in read.iter().zip(&expected) {
        assert_eq!(r.records.len(), e.records.len());
        for (a, b) in r.records.iter().zip(&e.records) {
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.joints, b.joints);
            assert_eq!(a.tactile, b.tactile);
        }
    }

    let processed = preprocess_all(&read, &PreprocessConfig::default()).unwrap();
    assert!(processed.iter().all(|t| t.len() == 330));
    let ds = Dataset::new(processed);
    let split = ds.split(3).unwrap();
    assert_eq!(split.train_trials.len(), 8);
    assert_eq!(split.val_trials.len(), 4);
    let mut all: Vec<usize> = split.train_trials.iter().chain(&split.val_trials).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..12).collect::<Vec<_>>());
    assert_eq!(split.train.len(), 8 * (330 - ds.horizon));
    assert_eq!(split.val.len(), 4 * (330 - ds.horizon));
    assert_eq!(ds.split(3).unwrap().train_trials, split.train_trials);
}

#[test]
fn resumed_training_matches_uninterrupted_training_bitwise() {
    let topo = build_toy_hand();
    let cfg = GeneratorConfig::default();
    let plant = Plant::new(&topo, cfg.plant.clone()).unwrap();
    let trials = preprocess_all(&generate_dataset(&plant, &cfg, 2, 2, 9).unwrap(), &PreprocessConfig::default()).unwrap();
    let split = Dataset::new(trials).split(0).unwrap();
    let config = TrainConfig {
        model: ModelName::III,
        seed: 4,
        adam: AdamConfig::default().with_learning_rate(1e-3),
        ..TrainConfig::default()
    };

    let mut straight = Trainer::new(config.clone(), &topo).unwrap();
    straight.train(&split.train, &split.val, 4, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(config.clone(), &topo).unwrap();
    first.train(&split.train, &split.val, 2, None).unwrap();
    let path = dir.path().join("mid.json");
    save_checkpoint(&path, &first.checkpoint()).unwrap();
    let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path).unwrap(), config, &topo).unwrap();
    resumed.train(&split.train, &split.val, 2, None).unwrap();

    assert_eq!(resumed.epochs_completed, 4);
    assert_eq!(resumed.network.params, straight.network.params);
    assert_eq!(resumed.best_val_loss, straight.best_val_loss);
    let a = mean_loss(&resumed.network, &split.val, 100).unwrap();
    let b = mean_loss(&straight.network, &split.val, 100).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}
