//! Counterfactual perspective-taking over a human's argument.
//!
//! The engine estimates the classifier's confidence in a decision given only
//! a subset of a task's feature values by Monte Carlo marginalization over
//! the remaining features, then uses single-feature perturbations of the
//! human's argument to flag incompleteness, unreliability and conflicts.
//!
//! Every query draws its completions with a seed derived from the task id,
//! the argument and the decision, so recomputing a critique after a dialogue
//! update reproduces identical numbers.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::argument::Argument;
use crate::dataset::{self, Dataset, DatasetError, FeatureSchema, Instance, SamplingMode};
use crate::model::{softmax_in_place, Classifier, Distribution, ModelError};

/// Largest feature count accepted by [`Engine::exact_strongest_argument`].
pub const EXACT_SEARCH_LIMIT: usize = 12;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid engine parameter: {0}")]
    InvalidParams(String),
    #[error("not implemented: {0}")]
    NotImplemented(String),
    #[error("feature `{0}` is already in the argument")]
    AlreadyInArgument(String),
    #[error("feature `{0}` is not in the argument")]
    NotInArgument(String),
    #[error("class index {0} out of range")]
    UnknownClass(usize),
    #[error("exact search needs at most {limit} features, task has {found}")]
    TooManyFeatures { found: usize, limit: usize },
    #[error("task does not match the model schema: {0}")]
    Schema(String),
}

/// How conflicting alternatives are scored and ranked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictRanking {
    /// Confidence in the alternative given its strongest argument.
    #[default]
    StrongestArgument,
    /// Confidence in the alternative given the full task.
    FullInstance,
}

/// How the strongest argument for an alternative is constructed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgumentSearch {
    /// Features whose importance towards the alternative exceeds `mu`.
    #[default]
    Importance,
    /// Enumerate every non-empty subset.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    /// Threshold on confidence changes, in `[0, 1]`.
    pub epsilon: f64,
    /// Maximum number of conflicting alternatives reported.
    pub k: usize,
    pub max_feature_change: usize,
    /// Monte Carlo sample count.
    #[serde(rename = "samples")]
    pub l: usize,
    pub seed: u64,
    /// Importance threshold for strongest-argument construction.
    pub mu: f64,
    pub sampling_mode: SamplingMode,
    pub min_support: usize,
    pub conflict_ranking: ConflictRanking,
    pub argument_search: ArgumentSearch,
}

impl Default for EngineParams {
    fn default() -> Self {
        Self {
            epsilon: 0.04,
            k: 1,
            max_feature_change: 1,
            l: 5000,
            seed: 0,
            mu: 0.05,
            sampling_mode: SamplingMode::Independent,
            min_support: dataset::DEFAULT_MIN_SUPPORT,
            conflict_ranking: ConflictRanking::StrongestArgument,
            argument_search: ArgumentSearch::Importance,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(EngineError::InvalidParams(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.max_feature_change == 0 {
            return Err(EngineError::InvalidParams("max_feature_change must be at least 1".into()));
        }
        if self.max_feature_change > 1 {
            return Err(EngineError::NotImplemented(format!(
                "max_feature_change = {} (only single-feature perturbations are supported)",
                self.max_feature_change
            )));
        }
        if self.l == 0 {
            return Err(EngineError::InvalidParams("samples must be at least 1".into()));
        }
        if self.mu.is_nan() || self.mu <= 0.0 {
            return Err(EngineError::InvalidParams(format!("mu {} must be positive", self.mu)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    MissingSupporting,
    MissingOpposing,
    Unreliable,
    Irrelevant,
    Reliable,
}

impl IssueKind {
    /// Whether `delta` satisfies this kind's defining inequality.
    pub fn holds(self, delta: f64, epsilon: f64) -> bool {
        match self {
            IssueKind::MissingSupporting | IssueKind::Unreliable => delta > epsilon,
            IssueKind::MissingOpposing | IssueKind::Reliable => delta < -epsilon,
            IssueKind::Irrelevant => delta.abs() <= epsilon,
        }
    }

    /// Kinds computed by adding a feature (as opposed to removing one).
    pub fn is_addition(self) -> bool {
        matches!(self, IssueKind::MissingSupporting | IssueKind::MissingOpposing)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IssueFlag {
    pub kind: IssueKind,
    pub feature: String,
    pub feature_index: usize,
    /// Signed change in the model's confidence in the human's decision.
    pub delta: f64,
    /// Model's confidence in the decision given the unperturbed argument.
    pub base_confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictCandidate {
    pub alt_decision: String,
    pub alt_index: usize,
    pub argument: Argument,
    pub features: Vec<String>,
    pub confidence: f64,
}

/// The engine's report for one (decision, argument) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub decision: String,
    pub decision_index: usize,
    pub argument: Argument,
    /// Model confidence in the decision given the argument.
    pub p_m: f64,
    /// Reliable features.
    pub agreement: Vec<IssueFlag>,
    /// Missing supporting and missing opposing features.
    pub incompleteness: Vec<IssueFlag>,
    /// Unreliable features.
    pub unreliability: Vec<IssueFlag>,
    /// Irrelevant features; kept for reports, never shown in dialogue.
    pub suppressed: Vec<IssueFlag>,
    /// At most `k` alternatives, highest confidence first.
    pub conflicts: Vec<ConflictCandidate>,
}

impl Critique {
    pub fn is_empty(&self) -> bool {
        self.agreement.is_empty()
            && self.incompleteness.is_empty()
            && self.unreliability.is_empty()
            && self.conflicts.is_empty()
    }

    pub fn flags(&self) -> impl Iterator<Item = &IssueFlag> {
        self.agreement
            .iter()
            .chain(&self.incompleteness)
            .chain(&self.unreliability)
            .chain(&self.suppressed)
    }
}

/// Scores `s(X_i, y)` of every feature towards a decision.
pub trait ImportanceMethod: Send + Sync {
    fn scores(&self, engine: &Engine, task: &Instance, decision: usize, params: &EngineParams)
        -> Result<Vec<f64>, EngineError>;
}

/// `s(X_i, y) = P(y | {X_i}) - P(y | ∅)`: the shift in marginal confidence
/// from revealing one feature alone. Positive scores support `y`.
#[derive(Clone, Copy, Debug, Default)]
pub struct MarginalShift;

impl ImportanceMethod for MarginalShift {
    fn scores(
        &self,
        engine: &Engine,
        task: &Instance,
        decision: usize,
        params: &EngineParams,
    ) -> Result<Vec<f64>, EngineError> {
        let prior = engine.marginal_confidence(task, decision, &Argument::empty(), params)?;
        (0..engine.schema().arity())
            .map(|f| {
                let alone = engine.marginal_confidence(task, decision, &Argument::empty().with(f), params)?;
                Ok(alone - prior)
            })
            .collect()
    }
}

/// Stable per-query seed from the base seed, task id, argument and decision.
pub fn query_seed(base: u64, task_id: &str, argument: &Argument, decision: usize) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"aact-query-v1");
    hasher.update(base.to_le_bytes());
    hasher.update((task_id.len() as u64).to_le_bytes());
    hasher.update(task_id.as_bytes());
    for f in argument.iter() {
        hasher.update((f as u64).to_le_bytes());
    }
    hasher.update(u64::MAX.to_le_bytes());
    hasher.update((decision as u64).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

/// A classifier bound to its training split.
pub struct Engine {
    classifier: Classifier,
    train: Dataset,
    /// `rows × features × classes` score contributions of the training rows.
    contributions: Vec<f64>,
    importance: Box<dyn ImportanceMethod>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("features", &self.schema().arity())
            .field("classes", &self.schema().num_classes())
            .field("train_rows", &self.train.len())
            .finish()
    }
}

impl Engine {
    pub fn new(classifier: Classifier, train: Dataset) -> Result<Self, EngineError> {
        let (m, d) = (classifier.schema(), train.schema());
        if m.classes != d.classes
            || m.arity() != d.arity()
            || m.features.iter().zip(&d.features).any(|(a, b)| a.name != b.name)
        {
            return Err(EngineError::Schema("classifier and training data disagree".into()));
        }
        let (n_features, n_classes) = (m.arity(), m.num_classes());
        let mut contributions = vec![0.0; train.len() * n_features * n_classes];
        for (r, row) in train.rows().iter().enumerate() {
            for (f, value) in row.values.iter().enumerate() {
                let at = (r * n_features + f) * n_classes;
                classifier.add_contribution(f, value, &mut contributions[at..at + n_classes]);
            }
        }
        Ok(Self {
            classifier,
            train,
            contributions,
            importance: Box::new(MarginalShift),
        })
    }

    /// Swaps the importance function used for strongest-argument search.
    pub fn with_importance(mut self, importance: Box<dyn ImportanceMethod>) -> Self {
        self.importance = importance;
        self
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn train(&self) -> &Dataset {
        &self.train
    }

    /// The training split's schema (with fitted bins).
    pub fn schema(&self) -> &FeatureSchema {
        self.train.schema()
    }

    fn check_task(&self, task: &Instance) -> Result<(), EngineError> {
        if task.values.len() != self.schema().arity() {
            return Err(EngineError::Schema(format!(
                "task {} has {} values, expected {}",
                task.id,
                task.values.len(),
                self.schema().arity()
            )));
        }
        Ok(())
    }

    fn check_class(&self, class: usize) -> Result<(), EngineError> {
        if class >= self.schema().num_classes() {
            return Err(EngineError::UnknownClass(class));
        }
        Ok(())
    }

    /// Marginal class distribution given `argument`, from one completion set
    /// drawn with `seed`.
    pub fn marginal_distribution(
        &self,
        task: &Instance,
        argument: &Argument,
        params: &EngineParams,
        seed: u64,
    ) -> Result<Distribution, EngineError> {
        self.check_task(task)?;
        let (n_features, n_classes) = (self.schema().arity(), self.schema().num_classes());
        if argument.iter().any(|f| f >= n_features) {
            return Err(EngineError::Schema("argument feature out of range".into()));
        }
        if argument.is_full(n_features) {
            return Ok(self.classifier.predict_proba(task)?);
        }

        let rows = match dataset::sample_rows(&self.train, task, argument, params.l, seed, params.sampling_mode) {
            Err(DatasetError::NoMatchingRows) => {
                tracing::debug!(task = %task.id, "no conditional matches, sampling independently");
                dataset::sample_rows(&self.train, task, argument, params.l, seed, SamplingMode::Independent)?
            }
            other => other?,
        };

        let mut base = self.classifier.intercepts().to_vec();
        for f in argument.iter() {
            self.classifier.add_contribution(f, &task.values[f], &mut base);
        }
        let free: Vec<usize> = (0..n_features).filter(|f| !argument.contains(*f)).collect();
        let mut total = vec![0.0; n_classes];
        let mut scores = vec![0.0; n_classes];
        for &r in &rows {
            scores.copy_from_slice(&base);
            let row = &self.contributions[r * n_features * n_classes..(r + 1) * n_features * n_classes];
            for &f in &free {
                for (s, c) in scores.iter_mut().zip(&row[f * n_classes..(f + 1) * n_classes]) {
                    *s += c;
                }
            }
            softmax_in_place(&mut scores);
            for (t, p) in total.iter_mut().zip(&scores) {
                *t += p;
            }
        }
        let count = rows.len() as f64;
        Ok(Distribution::from_probs(total.into_iter().map(|t| t / count).collect()))
    }

    /// `P_M(decision | argument)`, exact when the argument covers every
    /// feature and Monte Carlo otherwise.
    pub fn marginal_confidence(
        &self,
        task: &Instance,
        decision: usize,
        argument: &Argument,
        params: &EngineParams,
    ) -> Result<f64, EngineError> {
        self.check_class(decision)?;
        let seed = query_seed(params.seed, &task.id, argument, decision);
        Ok(self.marginal_distribution(task, argument, params, seed)?.get(decision))
    }

    /// Change in confidence from adding `feature` to the argument.
    pub fn confidence_delta_add(
        &self,
        task: &Instance,
        decision: usize,
        argument: &Argument,
        feature: usize,
        params: &EngineParams,
    ) -> Result<f64, EngineError> {
        if argument.contains(feature) {
            return Err(EngineError::AlreadyInArgument(self.feature_name(feature)));
        }
        let with = self.marginal_confidence(task, decision, &argument.with(feature), params)?;
        let base = self.marginal_confidence(task, decision, argument, params)?;
        Ok(with - base)
    }

    /// Change in confidence from removing `feature` from the argument.
    pub fn confidence_delta_remove(
        &self,
        task: &Instance,
        decision: usize,
        argument: &Argument,
        feature: usize,
        params: &EngineParams,
    ) -> Result<f64, EngineError> {
        if !argument.contains(feature) {
            return Err(EngineError::NotInArgument(self.feature_name(feature)));
        }
        let without = self.marginal_confidence(task, decision, &argument.without(feature), params)?;
        let base = self.marginal_confidence(task, decision, argument, params)?;
        Ok(without - base)
    }

    fn feature_name(&self, feature: usize) -> String {
        self.schema()
            .features
            .get(feature)
            .map(|f| f.name.clone())
            .unwrap_or_else(|| format!("#{feature}"))
    }

    pub fn feature_importance(
        &self,
        task: &Instance,
        decision: usize,
        params: &EngineParams,
    ) -> Result<Vec<f64>, EngineError> {
        self.check_task(task)?;
        self.check_class(decision)?;
        self.importance.scores(self, task, decision, params)
    }

    /// Features with importance towards `alt_decision` above `mu`; `None`
    /// when no feature qualifies.
    pub fn strongest_argument(
        &self,
        task: &Instance,
        alt_decision: usize,
        params: &EngineParams,
    ) -> Result<Option<Argument>, EngineError> {
        let scores = self.feature_importance(task, alt_decision, params)?;
        let argument: Argument = scores
            .iter()
            .enumerate()
            .filter(|(_, s)| **s > params.mu)
            .map(|(f, _)| f)
            .collect();
        Ok((!argument.is_empty()).then_some(argument))
    }

    /// Argmax of `P(alt_decision | subset)` over all non-empty subsets. Ties
    /// go to the smaller subset, then to the lexicographically smaller list
    /// of feature indices.
    pub fn exact_strongest_argument(
        &self,
        task: &Instance,
        alt_decision: usize,
        params: &EngineParams,
    ) -> Result<(Argument, f64), EngineError> {
        let n = self.schema().arity();
        if n > EXACT_SEARCH_LIMIT {
            return Err(EngineError::TooManyFeatures {
                found: n,
                limit: EXACT_SEARCH_LIMIT,
            });
        }
        if n == 0 {
            return Err(EngineError::Schema("schema has no features".into()));
        }
        let mut best: Option<(Argument, f64)> = None;
        for mask in 1u32..(1 << n) {
            let subset: Argument = (0..n).filter(|f| mask & (1 << f) != 0).collect();
            let value = self.marginal_confidence(task, alt_decision, &subset, params)?;
            let better = match &best {
                None => true,
                Some((current, v)) => {
                    value > *v
                        || (value == *v
                            && (subset.len(), subset.iter().collect::<Vec<_>>())
                                < (current.len(), current.iter().collect::<Vec<_>>()))
                }
            };
            if better {
                best = Some((subset, value));
            }
        }
        Ok(best.expect("at least one subset"))
    }

    fn search_argument(
        &self,
        task: &Instance,
        alt: usize,
        params: &EngineParams,
    ) -> Result<Option<Argument>, EngineError> {
        match params.argument_search {
            ArgumentSearch::Importance => self.strongest_argument(task, alt, params),
            ArgumentSearch::Exact => Ok(Some(self.exact_strongest_argument(task, alt, params)?.0)),
        }
    }

    /// Runs every single-feature perturbation of the human's argument and
    /// the conflict search.
    pub fn identify_issues(
        &self,
        task: &Instance,
        decision: usize,
        argument: &Argument,
        params: &EngineParams,
    ) -> Result<Critique, EngineError> {
        params.validate()?;
        self.check_task(task)?;
        self.check_class(decision)?;
        let schema = self.schema();
        let p_m = self.marginal_confidence(task, decision, argument, params)?;

        let mut critique = Critique {
            decision: schema.class_name(decision).to_string(),
            decision_index: decision,
            argument: argument.clone(),
            p_m,
            agreement: Vec::new(),
            incompleteness: Vec::new(),
            unreliability: Vec::new(),
            suppressed: Vec::new(),
            conflicts: Vec::new(),
        };

        for f in 0..schema.arity() {
            let flag = |kind, delta| IssueFlag {
                kind,
                feature: schema.features[f].name.clone(),
                feature_index: f,
                delta,
                base_confidence: p_m,
            };
            if argument.contains(f) {
                let delta = self.marginal_confidence(task, decision, &argument.without(f), params)? - p_m;
                if delta > params.epsilon {
                    critique.unreliability.push(flag(IssueKind::Unreliable, delta));
                } else if delta < -params.epsilon {
                    critique.agreement.push(flag(IssueKind::Reliable, delta));
                } else {
                    critique.suppressed.push(flag(IssueKind::Irrelevant, delta));
                }
            } else {
                let delta = self.marginal_confidence(task, decision, &argument.with(f), params)? - p_m;
                if delta > params.epsilon {
                    critique.incompleteness.push(flag(IssueKind::MissingSupporting, delta));
                } else if delta < -params.epsilon {
                    critique.incompleteness.push(flag(IssueKind::MissingOpposing, delta));
                }
            }
        }

        let chance = 1.0 / schema.num_classes() as f64;
        let mut conflicts = Vec::new();
        if params.k > 0 {
            for alt in (0..schema.num_classes()).filter(|&c| c != decision) {
                let Some(alt_argument) = self.search_argument(task, alt, params)? else {
                    continue;
                };
                let confidence = match params.conflict_ranking {
                    ConflictRanking::StrongestArgument => {
                        self.marginal_confidence(task, alt, &alt_argument, params)?
                    }
                    ConflictRanking::FullInstance => self.classifier.predict_proba(task)?.get(alt),
                };
                if confidence > chance {
                    conflicts.push(ConflictCandidate {
                        alt_decision: schema.class_name(alt).to_string(),
                        alt_index: alt,
                        features: alt_argument.names(schema),
                        argument: alt_argument,
                        confidence,
                    });
                }
            }
        }
        // stable sort keeps lower class indices first among equal confidences
        conflicts.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        conflicts.truncate(params.k);
        critique.conflicts = conflicts;
        Ok(critique)
    }
}
