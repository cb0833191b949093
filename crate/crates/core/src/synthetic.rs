//! Small hand-specified models over binary features.
//!
//! Used by the simulator and by tests that need critiques with a known
//! shape. Feature `j` is named `x{j+1}` and takes values 0 or 1; a model is
//! given as per-class score effects added when a feature equals 1.

use crate::counterfactual::{Engine, EngineError};
use crate::dataset::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, Instance, Value};
use crate::model::{Classifier, Encoding, FeatureEncoding};

pub fn binary_schema(features: usize, classes: &[&str]) -> FeatureSchema {
    FeatureSchema::new(
        (1..=features)
            .map(|j| FeatureSpec::new(format!("x{j}"), FeatureKind::Integer))
            .collect(),
        classes.iter().map(|c| c.to_string()).collect(),
    )
    .expect("synthetic schema is valid")
}

/// `effects[c][j]` is added to class `c`'s score when feature `j` is 1.
pub fn binary_classifier(schema: &FeatureSchema, effects: &[Vec<f64>], intercepts: &[f64]) -> Classifier {
    let encoding = Encoding {
        features: (0..schema.arity())
            .map(|_| FeatureEncoding::OneHot {
                vocabulary: vec![Value::Int(0), Value::Int(1)],
            })
            .collect(),
    };
    let weights = effects
        .iter()
        .map(|row| row.iter().flat_map(|&w| [0.0, w]).collect())
        .collect();
    Classifier::from_parts(schema.clone(), encoding, weights, intercepts.to_vec()).expect("synthetic model is valid")
}

/// Every 0/1 combination of `features` bits, first feature varying fastest.
pub fn factorial(features: usize) -> Vec<Vec<i64>> {
    (0..1u64 << features)
        .map(|m| (0..features).map(|j| ((m >> j) & 1) as i64).collect())
        .collect()
}

pub fn binary_instance(id: impl Into<String>, bits: &[i64], label: Option<usize>) -> Instance {
    Instance::new(id, bits.iter().map(|&b| Value::Int(b)).collect(), label)
}

/// An engine whose training split is the full factorial design over the
/// features, each row labeled with the model's own prediction.
pub fn binary_engine(classes: &[&str], effects: &[Vec<f64>], intercepts: &[f64]) -> Result<Engine, EngineError> {
    let features = effects.first().map_or(0, Vec::len);
    let schema = binary_schema(features, classes);
    let model = binary_classifier(&schema, effects, intercepts);
    let rows = factorial(features)
        .iter()
        .enumerate()
        .map(|(i, bits)| {
            let mut row = binary_instance(format!("r{i}"), bits, None);
            row.label = Some(model.predict(&row)?);
            Ok(row)
        })
        .collect::<Result<Vec<_>, EngineError>>()?;
    Engine::new(model, Dataset::new(schema, rows)?)
}

/// Like [`binary_engine`] but with caller-supplied labeled training rows.
pub fn binary_engine_with_rows(
    classes: &[&str],
    effects: &[Vec<f64>],
    intercepts: &[f64],
    rows: &[(Vec<i64>, usize)],
) -> Result<Engine, EngineError> {
    let features = effects.first().map_or(0, Vec::len);
    let schema = binary_schema(features, classes);
    let model = binary_classifier(&schema, effects, intercepts);
    let rows = rows
        .iter()
        .enumerate()
        .map(|(i, (bits, label))| binary_instance(format!("r{i}"), bits, Some(*label)))
        .collect();
    Engine::new(model, Dataset::new(schema, rows)?)
}
