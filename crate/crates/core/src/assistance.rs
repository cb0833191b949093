//! Baseline assistance payloads: a plain recommendation, and per-class
//! evidence without any prediction.

use serde::{Deserialize, Serialize};

use crate::counterfactual::{Engine, EngineError, EngineParams};
use crate::dataset::Instance;

/// Scores with smaller magnitude are listed as neither supporting nor
/// opposing.
pub const NEUTRAL_CUTOFF: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub prediction: String,
    pub confidence: f64,
    /// Signed importance of every feature towards `prediction`.
    pub importances: Vec<FeatureScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEvidence {
    pub class: String,
    pub supporting: Vec<FeatureScore>,
    pub opposing: Vec<FeatureScore>,
    pub neither: Vec<String>,
}

/// Evidence for and against every class. Deliberately carries no
/// prediction or confidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisEvidence {
    pub classes: Vec<ClassEvidence>,
}

pub fn recommender_payload(
    engine: &Engine,
    task: &Instance,
    params: &EngineParams,
) -> Result<Recommendation, EngineError> {
    let dist = engine.classifier().predict_proba(task)?;
    let prediction = dist.argmax();
    let scores = engine.feature_importance(task, prediction, params)?;
    let schema = engine.schema();
    Ok(Recommendation {
        prediction: schema.class_name(prediction).to_string(),
        confidence: dist.max(),
        importances: schema
            .features
            .iter()
            .zip(scores)
            .map(|(f, score)| FeatureScore {
                feature: f.name.clone(),
                score,
            })
            .collect(),
    })
}

pub fn analyzer_payload(
    engine: &Engine,
    task: &Instance,
    params: &EngineParams,
) -> Result<HypothesisEvidence, EngineError> {
    let schema = engine.schema();
    let mut classes = Vec::with_capacity(schema.num_classes());
    for class in 0..schema.num_classes() {
        let scores = engine.feature_importance(task, class, params)?;
        let mut evidence = ClassEvidence {
            class: schema.class_name(class).to_string(),
            supporting: Vec::new(),
            opposing: Vec::new(),
            neither: Vec::new(),
        };
        for (spec, score) in schema.features.iter().zip(scores) {
            let entry = FeatureScore {
                feature: spec.name.clone(),
                score,
            };
            if score >= NEUTRAL_CUTOFF {
                evidence.supporting.push(entry);
            } else if score <= -NEUTRAL_CUTOFF {
                evidence.opposing.push(entry);
            } else {
                evidence.neither.push(spec.name.clone());
            }
        }
        classes.push(evidence);
    }
    Ok(HypothesisEvidence { classes })
}
