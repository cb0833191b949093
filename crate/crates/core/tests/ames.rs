use std::path::PathBuf;

use aact_core::dataset::{
    self, discretize_price, load_dataset, prepare, PriceBand, SplitOptions, DEFAULT_BINS,
};
use aact_core::model::{evaluate, train, TrainingConfig};
use aact_core::{Argument, Classifier, Dataset, Engine, EngineParams, FeatureSchema};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn ames() -> Dataset {
    let schema = FeatureSchema::from_toml_file(data_dir().join("ames_schema.toml")).unwrap();
    load_dataset(data_dir().join("ames.csv"), &schema).unwrap()
}

fn split() -> (Dataset, Dataset) {
    prepare(&ames(), &SplitOptions::default(), DEFAULT_BINS).unwrap()
}

#[test]
fn loads_every_row_with_banded_labels() {
    let data = ames();
    assert_eq!(data.len(), 2930);
    assert_eq!(data.schema().arity(), 8);
    assert_eq!(data.class_counts(), [237, 1836, 857]);
    assert_eq!(data.schema().feature_names()[6], "age when sold");
}

#[test]
fn price_band_boundaries() {
    assert_eq!(discretize_price(99_999.0).unwrap(), PriceBand::Low);
    assert_eq!(discretize_price(100_000.0).unwrap(), PriceBand::Medium);
    assert_eq!(discretize_price(200_000.0).unwrap(), PriceBand::Medium);
    assert_eq!(discretize_price(200_001.0).unwrap(), PriceBand::High);
    assert!(discretize_price(-1.0).is_err());
}

#[test]
fn split_sizes_and_determinism() {
    let (train_a, test_a) = split();
    let (train_b, test_b) = split();
    assert_eq!((train_a.len(), test_a.len()), (2344, 586));
    let ids = |d: &Dataset| d.rows().iter().map(|r| r.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&train_a), ids(&train_b));
    assert_eq!(ids(&test_a), ids(&test_b));
    let train_ids: std::collections::HashSet<_> = ids(&train_a).into_iter().collect();
    assert!(ids(&test_a).iter().all(|id| !train_ids.contains(id)));
    let other = SplitOptions { seed: 25, ..SplitOptions::default() };
    let (train_c, _) = prepare(&ames(), &other, DEFAULT_BINS).unwrap();
    assert_ne!(ids(&train_a), ids(&train_c));
}

#[test]
fn empirical_estimate_of_empty_argument_is_class_frequency() {
    let (train, test) = split();
    let counts = train.class_counts();
    let task = &test.rows()[0];
    let mut total = 0.0;
    for (class, &count) in counts.iter().enumerate() {
        let est = dataset::empirical_confidence(&train, task, class, &Argument::empty(), 10).unwrap();
        assert_eq!(est.support, train.len());
        let p = est.probability.unwrap();
        assert_eq!(p, count as f64 / train.len() as f64);
        total += p;
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn training_is_deterministic_and_survives_a_round_trip() {
    let (train_set, test) = split();
    let a = train(&train_set, &TrainingConfig::default()).unwrap();
    let b = train(&train_set, &TrainingConfig::default()).unwrap();
    assert_eq!(a.weights(), b.weights());
    assert_eq!(a.intercepts(), b.intercepts());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    a.save(&path).unwrap();
    let loaded = Classifier::load(&path).unwrap();
    for row in test.rows() {
        let x: Vec<u64> = a.predict_proba(row).unwrap().probs().iter().map(|p| p.to_bits()).collect();
        let y: Vec<u64> = loaded.predict_proba(row).unwrap().probs().iter().map(|p| p.to_bits()).collect();
        assert_eq!(x, y);
    }
    let meta = loaded.training_meta().unwrap();
    assert!(meta.iterations <= meta.max_iterations);
}

#[test]
fn held_out_metrics_are_consistent() {
    let (train_set, test) = split();
    let model = train(&train_set, &TrainingConfig::default()).unwrap();
    let eval = evaluate(&model, &test).unwrap();
    assert_eq!(eval.rows, 586);
    let recall_mean = eval.recall.iter().map(|s| s.value).sum::<f64>() / 3.0;
    assert!((eval.balanced_accuracy - recall_mean).abs() < 1e-12);
    let correct = test
        .rows()
        .iter()
        .filter(|r| model.predict(r).unwrap() == r.label.unwrap())
        .count();
    assert_eq!(eval.accuracy, correct as f64 / 586.0);
}

#[test]
fn engine_full_argument_matches_the_classifier() {
    let (train_set, test) = split();
    let model = train(&train_set, &TrainingConfig::default()).unwrap();
    let engine = Engine::new(model, train_set).unwrap();
    let params = EngineParams::default();
    for row in test.rows().iter().take(10) {
        let direct = engine.classifier().predict_proba(row).unwrap();
        for class in 0..3 {
            let m = engine.marginal_confidence(row, class, &Argument::full(8), &params).unwrap();
            assert_eq!(m.to_bits(), direct.get(class).to_bits());
        }
    }
}
