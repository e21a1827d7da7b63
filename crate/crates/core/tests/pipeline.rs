use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rangegan_core::domain::{generate_dataset, load_dataset, save_dataset};
use rangegan_core::metrics::{condition_sweep, Labeler, SweepReport, SweepSettings};
use rangegan_core::models::{InferenceStats, TrainedModels};
use rangegan_core::trainer::{bundle, train_estimator, train_rangegan, TrainingLog};
use rangegan_core::{LabelSet, RangeCondition, TrainConfig};

fn quick(labels: LabelSet) -> TrainConfig {
    TrainConfig {
        labels,
        gan_steps: 150,
        estimator_steps: 150,
        log_every: 50,
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_checkpoint_and_reports_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_dataset(600, 5).unwrap();
    let data = dir.path().join("data.csv");
    save_dataset(&ds, &data).unwrap();
    let ds = load_dataset(&data).unwrap();

    let cfg = quick(LabelSet::Both);
    let (est, report) = train_estimator(&ds, &cfg).unwrap();
    assert_eq!(report.mae.len(), 2);
    let run = train_rangegan(&ds, &est, &cfg).unwrap();
    assert_eq!(run.log.rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![50, 100, 150]);

    let models = bundle(&run, &est, &ds, &cfg).unwrap();
    let path = dir.path().join("models.json");
    models.save(&path).unwrap();
    let loaded = TrainedModels::load(&path).unwrap();
    assert_eq!(loaded.generator, run.generator);
    assert_eq!(loaded.estimator, est);
    assert_eq!(loaded.manifest.normalizer, ds.meta.normalizer);

    let cond = RangeCondition::new(vec![(0.2, 0.4), (0.5, 0.7)]).unwrap();
    let draw = |m: &TrainedModels| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        m.generator.sample(40, &cond, InferenceStats::Running, &mut rng).unwrap()
    };
    assert_eq!(draw(&models), draw(&loaded));

    let log_path = dir.path().join("log.csv");
    run.log.save(&log_path).unwrap();
    assert_eq!(TrainingLog::load(&log_path).unwrap(), run.log);

    let settings = SweepSettings::new(0.2, 3, 30, 1);
    let sweep = condition_sweep(&loaded.generator, Labeler::Exact(&ds.meta.normalizer), &settings).unwrap();
    assert_eq!(sweep.rows.len(), 9);
    let report_path = dir.path().join("sweep.csv");
    sweep.save(&report_path).unwrap();
    assert_eq!(SweepReport::load(&report_path).unwrap(), sweep);
}

#[test]
fn single_sample_generation_pads_batch_statistics() {
    let ds = generate_dataset(400, 2).unwrap();
    let cfg = quick(LabelSet::Area);
    let (est, _) = train_estimator(&ds, &cfg).unwrap();
    let run = train_rangegan(&ds, &est, &cfg).unwrap();
    let cond = RangeCondition::single(0.4, 0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for stats in [InferenceStats::Batch, InferenceStats::Running] {
        let x = run.generator.sample(1, &cond, stats, &mut rng).unwrap();
        assert_eq!((x.rows(), x.cols()), (1, 6));
        assert!(x.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
