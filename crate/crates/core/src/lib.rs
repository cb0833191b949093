//! Counterfactual critique engine for tabular decision support.
//!
//! A probabilistic classifier adopts a human's argument (a subset of the
//! task's feature values), asks how its confidence in the human's decision
//! moves when that argument is perturbed, and turns the answers into a
//! structured critique-and-correction dialogue.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: schema, CSV ingestion, splitting and empirical queries.
//! - [`model`]: multinomial logistic regression, persistence and evaluation.
//! - [`counterfactual`]: marginal confidences, issue detection and
//!   strongest-argument search.
//! - [`assistance`]: recommender and analyzer baseline payloads.
//! - [`workflow`]: the dialogue state machine and its transcript.
//! - [`metrics`]: reliance and learning measures over transcripts.
//! - [`study`]: loading a saved model with its training split.
//! - [`synthetic`]: hand-specified binary-feature models.

pub mod argument;
pub mod assistance;
pub mod counterfactual;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod study;
pub mod synthetic;
pub mod template;
pub mod workflow;

pub use argument::Argument;
pub use counterfactual::{Critique, Engine, EngineParams};
pub use dataset::{Dataset, FeatureSchema, Instance, Value};
pub use model::{Classifier, Distribution};
