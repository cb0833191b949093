#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use aact_core::dataset::{load_dataset, prepare, SplitOptions, DEFAULT_BINS};
use aact_core::model::{train, TrainingConfig};
use aact_core::study::Study;
use aact_core::workflow::Clock;
use aact_core::{Engine, EngineParams, FeatureSchema, Instance};
use aact_service::SessionStore;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// The Ames engine and held-out tasks, trained once per test binary.
pub fn ames() -> (Arc<Engine>, Vec<Instance>) {
    static CELL: OnceLock<(Arc<Engine>, Vec<Instance>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let schema = FeatureSchema::from_toml_file(data_dir().join("ames_schema.toml")).unwrap();
        let data = load_dataset(data_dir().join("ames.csv"), &schema).unwrap();
        let split = SplitOptions::default();
        let (train_set, _) = prepare(&data, &split, DEFAULT_BINS).unwrap();
        let mut model = train(&train_set, &TrainingConfig::default()).unwrap();
        model.set_split(split, DEFAULT_BINS);
        let study = Study::from_parts(model, &data).unwrap();
        (Arc::new(study.engine), study.test.rows().to_vec())
    })
    .clone()
}

pub fn params() -> EngineParams {
    EngineParams {
        l: 1000,
        ..EngineParams::default()
    }
}

pub fn store() -> SessionStore {
    let (engine, tasks) = ames();
    SessionStore::new(engine, tasks, params()).with_clock(Clock::Logical)
}
