//! A trained model reunited with the data split it was fitted on.
//!
//! The model file records its split options and bin count, and its schema
//! keeps the CSV column mapping, so the raw CSV is enough to rebuild the
//! training partition the engine marginalizes over.

use std::path::Path;

use crate::counterfactual::{Engine, EngineError};
use crate::dataset::{self, Dataset, DatasetError, SplitOptions};
use crate::model::{Classifier, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

pub struct Study {
    pub engine: Engine,
    /// The held-out partition; tasks are drawn from here.
    pub test: Dataset,
}

impl Study {
    pub fn load(model: impl AsRef<Path>, data: impl AsRef<Path>) -> Result<Self, StudyError> {
        let model = Classifier::load(model)?;
        let data = dataset::load_dataset(data, model.schema())?;
        Self::from_parts(model, &data)
    }

    pub fn from_parts(model: Classifier, data: &Dataset) -> Result<Self, StudyError> {
        let meta = model.training_meta();
        let split = meta.and_then(|m| m.split).unwrap_or_default();
        let bins = meta.and_then(|m| m.bins).unwrap_or(dataset::DEFAULT_BINS);
        let (train, test) = dataset::prepare(data, &split, bins)?;
        let engine = Engine::new(model, train)?;
        Ok(Self { engine, test })
    }

    pub fn split(&self) -> SplitOptions {
        self.engine
            .classifier()
            .training_meta()
            .and_then(|m| m.split)
            .unwrap_or_default()
    }
}
