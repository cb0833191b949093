//! Multinomial logistic regression over encoded tabular features.
//!
//! Categorical and integer features are one-hot encoded against the
//! training vocabulary, continuous features are z-standardized. The model
//! is fit with a truncated Newton (Newton-CG) solver on the mean
//! cross-entropy plus an L2 penalty on the weights (not the intercepts).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FeatureKind, FeatureSchema, Instance, SplitOptions, Value};

/// Version of the persisted model document.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training data contains a single class")]
    SingleClass,
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("row {0} is unlabeled")]
    Unlabeled(usize),
    #[error("instance has {found} values, model expects {expected}")]
    Arity { found: usize, expected: usize },
    #[error("schema does not match the model: {0}")]
    SchemaMismatch(String),
    #[error("invalid model parameters: {0}")]
    Invalid(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupted model file at `{field}`: {message}")]
    Corrupt { field: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One probability per class, in schema class order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Normalised softmax of per-class scores.
    pub fn softmax(scores: &[f64]) -> Self {
        let mut probs = scores.to_vec();
        softmax_in_place(&mut probs);
        Self(probs)
    }

    pub fn from_probs(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable class; ties go to the lowest class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (c, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = c;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

pub(crate) fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FeatureEncoding {
    OneHot { vocabulary: Vec<Value> },
    Standardized { mean: f64, scale: f64 },
}

impl FeatureEncoding {
    pub fn width(&self) -> usize {
        match self {
            FeatureEncoding::OneHot { vocabulary } => vocabulary.len(),
            FeatureEncoding::Standardized { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub features: Vec<FeatureEncoding>,
}

impl Encoding {
    /// Fits vocabularies and standardization parameters on `train`.
    pub fn fit(train: &Dataset) -> Self {
        let schema = train.schema();
        let features = schema
            .features
            .iter()
            .enumerate()
            .map(|(f, spec)| match spec.kind {
                FeatureKind::Continuous => {
                    let xs: Vec<f64> = train.rows().iter().filter_map(|r| r.values[f].as_f64()).collect();
                    let n = xs.len().max(1) as f64;
                    let mean = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
                    FeatureEncoding::Standardized { mean, scale }
                }
                FeatureKind::Categorical | FeatureKind::Integer => {
                    let mut vocabulary: Vec<Value> = Vec::new();
                    for row in train.rows() {
                        if !vocabulary.contains(&row.values[f]) {
                            vocabulary.push(row.values[f].clone());
                        }
                    }
                    vocabulary.sort_by(compare_values);
                    FeatureEncoding::OneHot { vocabulary }
                }
            })
            .collect();
        Self { features }
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(FeatureEncoding::width).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.features.len());
        let mut acc = 0;
        for f in &self.features {
            offsets.push(acc);
            acc += f.width();
        }
        offsets
    }

    /// Dense encoded vector; unknown categories encode as all zeros.
    pub fn encode(&self, values: &[Value]) -> Vec<f64> {
        let mut out = vec![0.0; self.width()];
        for ((enc, value), offset) in self.features.iter().zip(values).zip(self.offsets()) {
            match enc {
                FeatureEncoding::OneHot { vocabulary } => {
                    if let Some(pos) = vocabulary.iter().position(|v| v == value) {
                        out[offset + pos] = 1.0;
                    }
                }
                FeatureEncoding::Standardized { mean, scale } => {
                    out[offset] = (value.as_f64().unwrap_or(*mean) - mean) / scale;
                }
            }
        }
        out
    }
}

fn compare_values(a: &Value, b: &Value) -> std::cmp::Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        _ => a
            .as_f64()
            .unwrap_or(f64::NAN)
            .total_cmp(&b.as_f64().unwrap_or(f64::NAN))
            .then_with(|| a.to_string().cmp(&b.to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    /// Inverse L2 strength; the penalty is `1 / (2 · C · n) · ‖W‖²`.
    pub l2_inverse_strength: f64,
    /// Stop once the max-abs gradient entry falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            l2_inverse_strength: 1.0,
            tolerance: 1e-6,
            max_iterations: 200,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub solver: String,
    pub seed: u64,
    pub l2_inverse_strength: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub train_accuracy: f64,
    /// The split that produced the training partition, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    schema: FeatureSchema,
    encoding: Encoding,
    /// `weights[c]` has one coefficient per encoded column.
    weights: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
    training_meta: Option<TrainingMeta>,
    offsets: Vec<usize>,
}

impl Classifier {
    /// Builds a classifier from explicit parameters.
    pub fn from_parts(
        schema: FeatureSchema,
        encoding: Encoding,
        weights: Vec<Vec<f64>>,
        intercepts: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let mut model = Self {
            schema,
            encoding,
            weights,
            intercepts,
            training_meta: None,
            offsets: Vec::new(),
        };
        model.check()?;
        model.offsets = model.encoding.offsets();
        Ok(model)
    }

    fn check(&self) -> Result<(), ModelError> {
        let classes = self.schema.num_classes();
        if self.encoding.features.len() != self.schema.arity() {
            return Err(ModelError::Corrupt {
                field: "encoding.features".into(),
                message: format!(
                    "{} encodings for {} features",
                    self.encoding.features.len(),
                    self.schema.arity()
                ),
            });
        }
        if self.weights.len() != classes {
            return Err(ModelError::Corrupt {
                field: "weights".into(),
                message: format!("{} weight rows for {classes} classes", self.weights.len()),
            });
        }
        let width = self.encoding.width();
        for (c, row) in self.weights.iter().enumerate() {
            if row.len() != width {
                return Err(ModelError::Corrupt {
                    field: format!("weights[{c}]"),
                    message: format!("{} coefficients for {width} encoded columns", row.len()),
                });
            }
        }
        if self.intercepts.len() != classes {
            return Err(ModelError::Corrupt {
                field: "intercepts".into(),
                message: format!("{} intercepts for {classes} classes", self.intercepts.len()),
            });
        }
        Ok(())
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn training_meta(&self) -> Option<&TrainingMeta> {
        self.training_meta.as_ref()
    }

    pub fn set_split(&mut self, split: SplitOptions, bins: usize) {
        if let Some(meta) = self.training_meta.as_mut() {
            meta.split = Some(split);
            meta.bins = Some(bins);
        }
    }

    pub fn num_classes(&self) -> usize {
        self.intercepts.len()
    }

    /// Adds feature `feature`'s per-class score contribution for `value`
    /// into `out`. Scores are additive over features, so a full score is
    /// the intercepts plus every feature's contribution.
    pub fn add_contribution(&self, feature: usize, value: &Value, out: &mut [f64]) {
        let offset = self.offsets[feature];
        match &self.encoding.features[feature] {
            FeatureEncoding::OneHot { vocabulary } => {
                if let Some(pos) = vocabulary.iter().position(|v| v == value) {
                    for (o, w) in out.iter_mut().zip(&self.weights) {
                        *o += w[offset + pos];
                    }
                }
            }
            FeatureEncoding::Standardized { mean, scale } => {
                let z = (value.as_f64().unwrap_or(*mean) - mean) / scale;
                for (o, w) in out.iter_mut().zip(&self.weights) {
                    *o += w[offset] * z;
                }
            }
        }
    }

    /// Names of features whose categorical value is outside the training
    /// vocabulary (they encode as all zeros).
    pub fn unknown_values(&self, values: &[Value]) -> Vec<String> {
        self.encoding
            .features
            .iter()
            .zip(values)
            .zip(&self.schema.features)
            .filter_map(|((enc, v), spec)| match enc {
                FeatureEncoding::OneHot { vocabulary } if !vocabulary.contains(v) => Some(spec.name.clone()),
                _ => None,
            })
            .collect()
    }

    /// Per-class linear scores.
    pub fn scores(&self, values: &[Value]) -> Vec<f64> {
        let mut scores = self.intercepts.clone();
        for (f, value) in values.iter().enumerate() {
            self.add_contribution(f, value, &mut scores);
        }
        scores
    }

    pub fn predict_values(&self, values: &[Value]) -> Result<Distribution, ModelError> {
        if values.len() != self.schema.arity() {
            return Err(ModelError::Arity {
                found: values.len(),
                expected: self.schema.arity(),
            });
        }
        let unknown = self.unknown_values(values);
        if !unknown.is_empty() {
            tracing::warn!(features = ?unknown, "value outside training vocabulary encoded as zeros");
        }
        Ok(Distribution::softmax(&self.scores(values)))
    }

    pub fn predict_proba(&self, instance: &Instance) -> Result<Distribution, ModelError> {
        self.predict_values(&instance.values)
    }

    pub fn predict(&self, instance: &Instance) -> Result<usize, ModelError> {
        Ok(self.predict_proba(instance)?.argmax())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = ModelDocument {
            format_version: FORMAT_VERSION,
            schema: self.schema.clone(),
            encoding: self.encoding.clone(),
            weights: self.weights.clone(),
            intercepts: self.intercepts.clone(),
            training_meta: self.training_meta.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Corrupt {
            field: "<document>".into(),
            message: e.to_string(),
        })?;
        let found = raw
            .get("format_version")
            .ok_or_else(|| ModelError::Corrupt {
                field: "format_version".into(),
                message: "missing".into(),
            })?
            .as_u64()
            .ok_or_else(|| ModelError::Corrupt {
                field: "format_version".into(),
                message: "not an unsigned integer".into(),
            })?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(ModelError::VersionMismatch {
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
        let doc: ModelDocument = serde_path_to_error::deserialize(raw).map_err(|e| ModelError::Corrupt {
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        let mut model = Self {
            schema: doc.schema,
            encoding: doc.encoding,
            weights: doc.weights,
            intercepts: doc.intercepts,
            training_meta: doc.training_meta,
            offsets: Vec::new(),
        };
        model.schema.validate().map_err(|e| ModelError::Corrupt {
            field: "schema".into(),
            message: e.to_string(),
        })?;
        model.check()?;
        model.offsets = model.encoding.offsets();
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    schema: FeatureSchema,
    encoding: Encoding,
    weights: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
    #[serde(default)]
    training_meta: Option<TrainingMeta>,
}

/// Dense design matrix with a trailing intercept column.
struct Design {
    rows: usize,
    cols: usize,
    x: Vec<f64>,
    y: Vec<usize>,
}

impl Design {
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.cols..(i + 1) * self.cols]
    }
}

/// Mean cross-entropy plus L2 on weights; parameters laid out class-major,
/// `classes × cols` with the intercept in the last column.
struct Objective<'a> {
    design: &'a Design,
    classes: usize,
    lambda: f64,
}

impl Objective<'_> {
    fn probabilities(&self, theta: &[f64]) -> Vec<f64> {
        let (k, d) = (self.classes, self.design.cols);
        let mut probs = vec![0.0; self.design.rows * k];
        for i in 0..self.design.rows {
            let x = self.design.row(i);
            let p = &mut probs[i * k..(i + 1) * k];
            for c in 0..k {
                p[c] = dot(&theta[c * d..(c + 1) * d], x);
            }
            softmax_in_place(p);
        }
        probs
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let (k, d) = (self.classes, self.design.cols);
        let mut loss = 0.0;
        let mut scores = vec![0.0; k];
        for i in 0..self.design.rows {
            let x = self.design.row(i);
            for c in 0..k {
                scores[c] = dot(&theta[c * d..(c + 1) * d], x);
            }
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            loss += lse - scores[self.design.y[i]];
        }
        loss / self.design.rows as f64 + 0.5 * self.lambda * self.penalty(theta)
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        let d = self.design.cols;
        theta
            .iter()
            .enumerate()
            .filter(|(j, _)| j % d != d - 1)
            .map(|(_, w)| w * w)
            .sum()
    }

    fn gradient(&self, theta: &[f64], probs: &[f64]) -> Vec<f64> {
        let (k, d, n) = (self.classes, self.design.cols, self.design.rows);
        let mut grad = vec![0.0; k * d];
        for i in 0..n {
            let x = self.design.row(i);
            for c in 0..k {
                let r = probs[i * k + c] - if self.design.y[i] == c { 1.0 } else { 0.0 };
                if r != 0.0 {
                    axpy(r, x, &mut grad[c * d..(c + 1) * d]);
                }
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            *g /= n as f64;
            if j % d != d - 1 {
                *g += self.lambda * theta[j];
            }
        }
        grad
    }

    fn hessian_product(&self, probs: &[f64], v: &[f64]) -> Vec<f64> {
        let (k, d, n) = (self.classes, self.design.cols, self.design.rows);
        let mut out = vec![0.0; k * d];
        let mut u = vec![0.0; k];
        for i in 0..n {
            let x = self.design.row(i);
            let p = &probs[i * k..(i + 1) * k];
            for c in 0..k {
                u[c] = dot(&v[c * d..(c + 1) * d], x);
            }
            let mean: f64 = p.iter().zip(&u).map(|(a, b)| a * b).sum();
            for c in 0..k {
                let t = p[c] * (u[c] - mean);
                if t != 0.0 {
                    axpy(t, x, &mut out[c * d..(c + 1) * d]);
                }
            }
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o /= n as f64;
            if j % d != d - 1 {
                *o += self.lambda * v[j];
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Approximately solves `H s = -g` by conjugate gradients.
fn conjugate_gradient(objective: &Objective, probs: &[f64], grad: &[f64], max_iter: usize) -> Vec<f64> {
    let mut s = vec![0.0; grad.len()];
    let mut r: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let g_norm = rs.sqrt();
    let tol = (0.5f64).min(g_norm.sqrt()) * g_norm;
    for _ in 0..max_iter {
        if rs.sqrt() <= tol {
            break;
        }
        let hp = objective.hessian_product(probs, &p);
        let curvature = dot(&p, &hp);
        if curvature <= 0.0 {
            if s.iter().all(|x| *x == 0.0) {
                s = r.clone();
            }
            break;
        }
        let alpha = rs / curvature;
        axpy(alpha, &p, &mut s);
        axpy(-alpha, &hp, &mut r);
        let rs_next = dot(&r, &r);
        let beta = rs_next / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_next;
    }
    s
}

/// Fits the classifier on a labeled training set.
pub fn train(train: &Dataset, config: &TrainingConfig) -> Result<Classifier, ModelError> {
    let schema = train.schema().clone();
    let classes = schema.num_classes();
    if train.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(ModelError::SingleClass);
    }
    if config.l2_inverse_strength.is_nan() || config.l2_inverse_strength <= 0.0 {
        return Err(ModelError::Invalid("l2_inverse_strength must be positive".into()));
    }
    let encoding = Encoding::fit(train);
    let width = encoding.width();
    let cols = width + 1;
    let mut x = Vec::with_capacity(train.len() * cols);
    for row in train.rows() {
        x.extend(encoding.encode(&row.values));
        x.push(1.0);
    }
    let design = Design {
        rows: train.len(),
        cols,
        x,
        y: (0..train.len()).map(|i| train.label(i)).collect(),
    };
    let objective = Objective {
        design: &design,
        classes,
        lambda: 1.0 / (config.l2_inverse_strength * train.len() as f64),
    };

    let mut theta = vec![0.0; classes * cols];
    let mut probs = objective.probabilities(&theta);
    let mut grad = objective.gradient(&theta, &probs);
    let mut value = objective.value(&theta);
    let mut iterations = 0;
    while max_abs(&grad) > config.tolerance {
        if iterations == config.max_iterations {
            return Err(ModelError::NotConverged {
                iterations,
                gradient_norm: max_abs(&grad),
            });
        }
        iterations += 1;
        let step = conjugate_gradient(&objective, &probs, &grad, 10 * theta.len());
        let slope = dot(&grad, &step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
            let candidate_value = objective.value(&candidate);
            if candidate_value <= value + 1e-4 * t * slope {
                theta = candidate;
                value = candidate_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        probs = objective.probabilities(&theta);
        grad = objective.gradient(&theta, &probs);
        if !accepted {
            // line search stalled: we are at the numerical floor
            if max_abs(&grad) <= config.tolerance.max(1e-10) * 10.0 {
                break;
            }
            return Err(ModelError::NotConverged {
                iterations,
                gradient_norm: max_abs(&grad),
            });
        }
    }

    let weights: Vec<Vec<f64>> = (0..classes)
        .map(|c| theta[c * cols..c * cols + width].to_vec())
        .collect();
    let intercepts: Vec<f64> = (0..classes).map(|c| theta[c * cols + width]).collect();
    let mut model = Classifier::from_parts(schema, encoding, weights, intercepts)?;
    let correct = train
        .rows()
        .iter()
        .filter(|r| model.predict_values(&r.values).map(|d| Some(d.argmax()) == r.label).unwrap_or(false))
        .count();
    model.training_meta = Some(TrainingMeta {
        solver: "newton-cg".into(),
        seed: config.seed,
        l2_inverse_strength: config.l2_inverse_strength,
        tolerance: config.tolerance,
        max_iterations: config.max_iterations,
        iterations,
        gradient_norm: max_abs(&grad),
        train_accuracy: correct as f64 / train.len() as f64,
        split: None,
        bins: None,
    });
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub rows: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub f1: Vec<ClassScore>,
    pub recall: Vec<ClassScore>,
}

impl Evaluation {
    pub fn f1_of(&self, class: &str) -> Option<f64> {
        self.f1.iter().find(|s| s.class == class).map(|s| s.value)
    }
}

/// Accuracy, balanced accuracy (mean recall over classes present in the
/// test set) and per-class F1 of argmax predictions.
pub fn evaluate(model: &Classifier, test: &Dataset) -> Result<Evaluation, ModelError> {
    let predictions = test
        .rows()
        .iter()
        .map(|r| model.predict(r))
        .collect::<Result<Vec<_>, _>>()?;
    let truth: Vec<usize> = test
        .rows()
        .iter()
        .enumerate()
        .map(|(i, r)| r.label.ok_or(ModelError::Unlabeled(i + 1)))
        .collect::<Result<_, _>>()?;
    evaluate_predictions(model.schema(), &truth, &predictions)
}

// the confusion matrix is read along both axes
#[allow(clippy::needless_range_loop)]
pub fn evaluate_predictions(
    schema: &FeatureSchema,
    truth: &[usize],
    predictions: &[usize],
) -> Result<Evaluation, ModelError> {
    if truth.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    let k = schema.num_classes();
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predictions) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut recalls = Vec::new();
    let mut f1 = Vec::new();
    let mut recall_out = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c] as f64;
        let actual: usize = confusion[c].iter().sum();
        let predicted: usize = (0..k).map(|t| confusion[t][c]).sum();
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        if actual > 0 {
            recalls.push(recall);
        }
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1.push(ClassScore {
            class: schema.classes[c].clone(),
            value: f,
        });
        recall_out.push(ClassScore {
            class: schema.classes[c].clone(),
            value: recall,
        });
    }
    Ok(Evaluation {
        rows: truth.len(),
        accuracy: correct as f64 / truth.len() as f64,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        f1,
        recall: recall_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{FeatureSpec, Target};

    fn two_feature_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                FeatureSpec::new("x1", FeatureKind::Continuous),
                FeatureSpec::new("x2", FeatureKind::Continuous),
            ],
            vec!["neg".into(), "pos".into()],
        )
        .unwrap()
    }

    fn hand_set(gap: f64) -> Classifier {
        let encoding = Encoding {
            features: vec![
                FeatureEncoding::Standardized { mean: 0.0, scale: 1.0 },
                FeatureEncoding::Standardized { mean: 0.0, scale: 1.0 },
            ],
        };
        Classifier::from_parts(
            two_feature_schema(),
            encoding,
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![gap, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = hand_set(0.0);
        let d = model.predict_values(&[Value::Real(3.0), Value::Real(-8.0)]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
    }

    #[test]
    fn ln3_gap_gives_three_to_one() {
        let model = hand_set(3f64.ln());
        let d = model.predict_values(&[Value::Real(0.0), Value::Real(0.0)]).unwrap();
        assert!((d.get(0) - 0.75).abs() < 1e-12);
        assert!((d.get(1) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn separable_toy_fits_perfectly() {
        let rows = (0..40)
            .map(|i| {
                let x1 = (i % 20) as f64 - 9.5;
                let x2 = ((i * 7) % 11) as f64;
                Instance::new(i.to_string(), vec![Value::Real(x1), Value::Real(x2)], Some((x1 > 0.0) as usize))
            })
            .collect();
        let data = Dataset::new(two_feature_schema(), rows).unwrap();
        let model = train(&data, &TrainingConfig::default()).unwrap();
        assert_eq!(model.training_meta().unwrap().train_accuracy, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let rows = (0..5)
            .map(|i| Instance::new(i.to_string(), vec![Value::Real(i as f64), Value::Real(0.0)], Some(1)))
            .collect();
        let data = Dataset::new(two_feature_schema(), rows).unwrap();
        let err = train(&data, &TrainingConfig::default()).unwrap_err();
        assert!(err.to_string().contains("single class"));
    }

    #[test]
    fn iteration_budget_is_reported() {
        let rows = (0..30)
            .map(|i| {
                let x = i as f64;
                Instance::new(i.to_string(), vec![Value::Real(x), Value::Real(x * x)], Some(i % 2))
            })
            .collect();
        let data = Dataset::new(two_feature_schema(), rows).unwrap();
        let config = TrainingConfig {
            max_iterations: 0,
            ..TrainingConfig::default()
        };
        match train(&data, &config) {
            Err(ModelError::NotConverged { iterations, .. }) => assert_eq!(iterations, 0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn constant_predictor_balanced_accuracy() {
        let mut schema = two_feature_schema();
        schema.classes = vec!["Low".into(), "Medium".into(), "High".into()];
        schema.target = Some(Target::Label { column: "y".into() });
        let truth = [0, 0, 1, 1, 2, 2];
        let preds = [1; 6];
        let eval = evaluate_predictions(&schema, &truth, &preds).unwrap();
        assert!((eval.balanced_accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert!((eval.accuracy - 1.0 / 3.0).abs() < 1e-12);

        let perfect = evaluate_predictions(&schema, &truth, &truth).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        assert_eq!(perfect.balanced_accuracy, 1.0);
        assert!(perfect.f1.iter().all(|s| s.value == 1.0));
    }

    #[test]
    fn version_and_corruption_errors() {
        let model = hand_set(0.3);
        let json = model.to_json();
        let old = json.replacen("\"format_version\": 1", "\"format_version\": 0", 1);
        assert!(matches!(
            Classifier::from_json(&old),
            Err(ModelError::VersionMismatch { found: 0, expected: 1 })
        ));
        let broken = json.replacen("\"intercepts\": [", "\"intercepts\": [\"oops\", ", 1);
        match Classifier::from_json(&broken) {
            Err(ModelError::Corrupt { field, .. }) => assert!(field.starts_with("intercepts"), "{field}"),
            other => panic!("expected corruption error, got {other:?}"),
        }
    }
}
