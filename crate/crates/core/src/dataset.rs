//! Tabular data: schema, CSV ingestion, splitting and empirical queries.
//!
//! Continuous features are matched by bin membership (quantile bins fitted
//! on the training split); every other kind is matched by equality. The same
//! matching rule drives empirical confidences and conditional sampling.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::argument::Argument;

/// Default number of equal-frequency bins for continuous features.
pub const DEFAULT_BINS: usize = 5;

/// Default minimum number of matching rows for an empirical estimate.
pub const DEFAULT_MIN_SUPPORT: usize = 10;

/// Split seed used when none is given.
pub const DEFAULT_SPLIT_SEED: u64 = 24;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("header mismatch: missing column(s) {}", .missing.join(", "))]
    HeaderMismatch { missing: Vec<String> },
    #[error("row {row}, column `{column}`: cannot read {value:?} as {kind}")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
        kind: FeatureKind,
    },
    #[error("row {row}: unknown class label {label:?}")]
    UnknownLabel { row: usize, label: String },
    #[error("row count ≥ 1 violated: dataset has no rows")]
    Empty,
    #[error("row {row} is unlabeled")]
    Unlabeled { row: usize },
    #[error("row {row} has {found} values, schema has {expected} features")]
    Arity {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("negative price {0}")]
    NegativePrice(f64),
    #[error("split ratio {0} outside (0, 1)")]
    Ratio(f64),
    #[error("split leaves an empty partition ({train} train / {test} test rows)")]
    EmptyPartition { train: usize, test: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("unknown class `{0}`")]
    UnknownClass(String),
    #[error("class index {0} out of range")]
    ClassIndex(usize),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("no training rows match the argument")]
    NoMatchingRows,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical,
    Integer,
    Continuous,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureKind::Categorical => "categorical",
            FeatureKind::Integer => "integer",
            FeatureKind::Continuous => "continuous",
        })
    }
}

/// A single cell value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Text(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Real(x) => Some(*x),
            Value::Text(s) => s.trim().parse().ok(),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Real(x) if x.fract() == 0.0 && x.abs() < 1e15 => write!(f, "{}", *x as i64),
            Value::Real(x) => write!(f, "{x}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

/// How a feature column is computed from raw CSV columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Derivation {
    /// `first - second`, e.g. year sold minus year built.
    Difference([String; 2]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Source CSV column; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derive: Option<Derivation>,
    /// Interior bin edges for continuous features, strictly increasing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<Vec<f64>>,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, kind: FeatureKind) -> Self {
        Self {
            name: name.into(),
            kind,
            column: None,
            derive: None,
            bins: None,
        }
    }

    pub fn with_bins(mut self, bins: Vec<f64>) -> Self {
        self.bins = Some(bins);
        self
    }

    fn source_columns(&self) -> Vec<&str> {
        match &self.derive {
            Some(Derivation::Difference([a, b])) => vec![a.as_str(), b.as_str()],
            None => vec![self.column.as_deref().unwrap_or(&self.name)],
        }
    }

    /// Parses a raw CSV cell according to the feature kind.
    pub fn parse(&self, raw: &str) -> Option<Value> {
        let raw = raw.trim();
        match self.kind {
            FeatureKind::Categorical => (!raw.is_empty()).then(|| Value::Text(raw.to_string())),
            FeatureKind::Integer => raw.parse().ok().map(Value::Int),
            FeatureKind::Continuous => raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Value::Real),
        }
    }

    /// Normalises a value supplied through an API to this feature's kind.
    pub fn coerce(&self, value: &Value) -> Option<Value> {
        match (self.kind, value) {
            (FeatureKind::Categorical, Value::Text(s)) => Some(Value::Text(s.clone())),
            (FeatureKind::Categorical, Value::Int(i)) => Some(Value::Text(i.to_string())),
            (FeatureKind::Integer, Value::Int(i)) => Some(Value::Int(*i)),
            (FeatureKind::Integer, Value::Real(x)) if x.fract() == 0.0 => Some(Value::Int(*x as i64)),
            (FeatureKind::Continuous, Value::Int(i)) => Some(Value::Real(*i as f64)),
            (FeatureKind::Continuous, Value::Real(x)) if x.is_finite() => Some(Value::Real(*x)),
            (_, Value::Text(s)) => self.parse(s),
            _ => None,
        }
    }

    /// Bin index of a continuous value: the number of edges `<= x`.
    pub fn bin_of(&self, value: &Value) -> Option<usize> {
        let edges = self.bins.as_ref()?;
        let x = value.as_f64()?;
        Some(edges.partition_point(|e| *e <= x))
    }

    /// Matching rule used for empirical estimates and conditional sampling.
    pub fn matches(&self, a: &Value, b: &Value) -> bool {
        match (self.kind, &self.bins) {
            (FeatureKind::Continuous, Some(_)) => {
                let (Some(x), Some(y)) = (self.bin_of(a), self.bin_of(b)) else {
                    return false;
                };
                x == y
            }
            _ => a == b,
        }
    }
}

/// How class labels are read from the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    /// The column already holds class labels.
    Label { column: String },
    /// The column holds a sale price banded by [`discretize_price`].
    PriceBands { column: String },
}

impl Target {
    fn column(&self) -> &str {
        match self {
            Target::Label { column } | Target::PriceBands { column } => column,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>, classes: Vec<String>) -> Result<Self, DatasetError> {
        let schema = Self {
            features,
            classes,
            target: None,
            id_column: None,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Reads a schema from a TOML config file.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DatasetError> {
        let schema: Self = toml::from_str(text).map_err(|e| DatasetError::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.classes.len() < 2 {
            return Err(DatasetError::Schema(format!(
                "need at least 2 classes, found {}",
                self.classes.len()
            )));
        }
        let mut seen = HashSet::new();
        for class in &self.classes {
            if !seen.insert(class.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate class `{class}`")));
            }
        }
        let mut seen = HashSet::new();
        for feature in &self.features {
            if !seen.insert(feature.name.as_str()) {
                return Err(DatasetError::Schema(format!(
                    "duplicate feature `{}`",
                    feature.name
                )));
            }
            if let Some(bins) = &feature.bins {
                if feature.kind != FeatureKind::Continuous {
                    return Err(DatasetError::Schema(format!(
                        "bins given for non-continuous feature `{}`",
                        feature.name
                    )));
                }
                if bins.windows(2).any(|w| w[0] >= w[1]) || bins.iter().any(|b| !b.is_finite()) {
                    return Err(DatasetError::Schema(format!(
                        "bin edges of `{}` are not strictly increasing",
                        feature.name
                    )));
                }
            }
        }
        if matches!(self.target, Some(Target::PriceBands { .. })) && self.classes.len() != 3 {
            return Err(DatasetError::Schema(
                "price bands need exactly three classes (low, medium, high)".into(),
            ));
        }
        Ok(())
    }

    /// True once every continuous feature carries bin edges.
    pub fn is_finalized(&self) -> bool {
        self.features
            .iter()
            .all(|f| f.kind != FeatureKind::Continuous || f.bins.is_some())
    }

    pub fn arity(&self) -> usize {
        self.features.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn class_name(&self, index: usize) -> &str {
        &self.classes[index]
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Validates and coerces an API-supplied value vector.
    pub fn coerce_values(&self, values: &[Value]) -> Result<Vec<Value>, DatasetError> {
        if values.len() != self.arity() {
            return Err(DatasetError::Arity {
                row: 0,
                found: values.len(),
                expected: self.arity(),
            });
        }
        self.features
            .iter()
            .zip(values)
            .map(|(spec, v)| {
                spec.coerce(v).ok_or_else(|| DatasetError::InvalidValue {
                    row: 0,
                    column: spec.name.clone(),
                    value: v.to_string(),
                    kind: spec.kind,
                })
            })
            .collect()
    }
}

/// One task: a full feature vector plus an optional ground-truth label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub values: Vec<Value>,
    /// Class index into the schema's class list.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl Instance {
    pub fn new(id: impl Into<String>, values: Vec<Value>, label: Option<usize>) -> Self {
        Self {
            id: id.into(),
            values,
            label,
        }
    }
}

/// A labeled table. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    rows: Vec<Instance>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Instance>) -> Result<Self, DatasetError> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(DatasetError::Empty);
        }
        for (n, row) in rows.iter().enumerate() {
            if row.values.len() != schema.arity() {
                return Err(DatasetError::Arity {
                    row: n + 1,
                    found: row.values.len(),
                    expected: schema.arity(),
                });
            }
            match row.label {
                None => return Err(DatasetError::Unlabeled { row: n + 1 }),
                Some(c) if c >= schema.num_classes() => return Err(DatasetError::ClassIndex(c)),
                Some(_) => {}
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Instance] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label(&self, row: usize) -> usize {
        self.rows[row].label.expect("dataset rows are labeled")
    }

    pub fn find(&self, id: &str) -> Option<&Instance> {
        self.rows.iter().find(|r| r.id == id)
    }

    /// Replaces the schema, e.g. after fitting bins. Feature names, kinds and
    /// classes must agree.
    pub fn with_schema(mut self, schema: FeatureSchema) -> Result<Self, DatasetError> {
        schema.validate()?;
        let compatible = schema.classes == self.schema.classes
            && schema.arity() == self.schema.arity()
            && schema
                .features
                .iter()
                .zip(&self.schema.features)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind);
        if !compatible {
            return Err(DatasetError::Schema(
                "replacement schema does not match dataset features".into(),
            ));
        }
        self.schema = schema;
        Ok(self)
    }

    /// Per-class row counts in schema class order.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.schema.num_classes()];
        for n in 0..self.rows.len() {
            counts[self.label(n)] += 1;
        }
        counts
    }

    /// Indices of rows whose values match `task` on every argument feature.
    pub fn matching_rows(&self, task: &Instance, argument: &Argument) -> Vec<usize> {
        let features: Vec<usize> = argument.iter().collect();
        (0..self.rows.len())
            .filter(|&r| {
                features.iter().all(|&f| {
                    self.schema.features[f].matches(&self.rows[r].values[f], &task.values[f])
                })
            })
            .collect()
    }
}

/// Loads a CSV with a header row into a [`Dataset`].
pub fn load_dataset(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset(file, schema)
}

/// Reads CSV text from any reader; see [`load_dataset`].
pub fn read_dataset<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset, DatasetError> {
    schema.validate()?;
    let target = schema
        .target
        .as_ref()
        .ok_or_else(|| DatasetError::Schema("schema has no target column".into()))?;
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let mut missing = Vec::new();
    let mut require = |name: &str| {
        let found = position(name);
        if found.is_none() && !missing.iter().any(|m: &String| m == name) {
            missing.push(name.to_string());
        }
        found
    };
    let sources: Vec<Vec<Option<usize>>> = schema
        .features
        .iter()
        .map(|f| f.source_columns().into_iter().map(&mut require).collect())
        .collect();
    let target_col = require(target.column());
    let id_col = match &schema.id_column {
        Some(name) => require(name),
        None => None,
    };
    if !missing.is_empty() {
        return Err(DatasetError::HeaderMismatch { missing });
    }
    let target_col = target_col.expect("checked above");

    let mut rows = Vec::new();
    for (n, record) in csv.records().enumerate() {
        let record = record?;
        let row = n + 1;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let mut values = Vec::with_capacity(schema.arity());
        for (spec, cols) in schema.features.iter().zip(&sources) {
            let value = match &spec.derive {
                None => {
                    let raw = cell(cols[0].expect("checked above"));
                    spec.parse(raw).ok_or_else(|| DatasetError::InvalidValue {
                        row,
                        column: spec.source_columns()[0].to_string(),
                        value: raw.to_string(),
                        kind: spec.kind,
                    })?
                }
                Some(Derivation::Difference(names)) => {
                    let mut operands = [0.0; 2];
                    for (k, col) in cols.iter().enumerate() {
                        let raw = cell(col.expect("checked above"));
                        operands[k] = raw.parse().map_err(|_| DatasetError::InvalidValue {
                            row,
                            column: names[k].clone(),
                            value: raw.to_string(),
                            kind: FeatureKind::Continuous,
                        })?;
                    }
                    let diff = operands[0] - operands[1];
                    match spec.kind {
                        FeatureKind::Continuous => Value::Real(diff),
                        FeatureKind::Integer => Value::Int(diff.round() as i64),
                        FeatureKind::Categorical => Value::Text(Value::Real(diff).to_string()),
                    }
                }
            };
            values.push(value);
        }
        let raw_label = cell(target_col);
        let label = match target {
            Target::Label { .. } => schema.class_index(raw_label),
            Target::PriceBands { .. } => {
                let price: f64 = raw_label.parse().map_err(|_| DatasetError::InvalidValue {
                    row,
                    column: target.column().to_string(),
                    value: raw_label.to_string(),
                    kind: FeatureKind::Continuous,
                })?;
                Some(discretize_price(price)?.index())
            }
        }
        .ok_or_else(|| DatasetError::UnknownLabel {
            row,
            label: raw_label.to_string(),
        })?;
        let id = match id_col {
            Some(c) => cell(c).to_string(),
            None => row.to_string(),
        };
        rows.push(Instance::new(id, values, Some(label)));
    }
    Dataset::new(schema.clone(), rows)
}

/// Sale-price bands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriceBand {
    Low,
    Medium,
    High,
}

impl PriceBand {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            PriceBand::Low => "Low",
            PriceBand::Medium => "Medium",
            PriceBand::High => "High",
        }
    }
}

/// Low below 100 000, High above 200 000, Medium in between (both
/// boundaries inclusive).
pub fn discretize_price(raw_price: f64) -> Result<PriceBand, DatasetError> {
    if raw_price.is_nan() || raw_price < 0.0 {
        return Err(DatasetError::NegativePrice(raw_price));
    }
    Ok(if raw_price < 100_000.0 {
        PriceBand::Low
    } else if raw_price <= 200_000.0 {
        PriceBand::Medium
    } else {
        PriceBand::High
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub ratio: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratify: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            ratio: 0.8,
            seed: DEFAULT_SPLIT_SEED,
            stratify: false,
        }
    }
}

/// Seeded shuffle split; `|train| = round(ratio · |rows|)`.
pub fn split(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, Dataset), DatasetError> {
    split_with(dataset, &SplitOptions { ratio, seed, stratify: false })
}

pub fn split_with(dataset: &Dataset, options: &SplitOptions) -> Result<(Dataset, Dataset), DatasetError> {
    let ratio = options.ratio;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::Ratio(ratio));
    }
    let n = dataset.len();
    let n_train = (ratio * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);

    let (train_idx, test_idx): (Vec<usize>, Vec<usize>) = if options.stratify {
        stratified_indices(dataset, n_train, &mut rng)
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let test = order.split_off(n_train);
        (order, test)
    };
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(DatasetError::EmptyPartition {
            train: train_idx.len(),
            test: test_idx.len(),
        });
    }
    let take = |idx: &[usize]| idx.iter().map(|&i| dataset.rows[i].clone()).collect();
    Ok((
        Dataset::new(dataset.schema.clone(), take(&train_idx))?,
        Dataset::new(dataset.schema.clone(), take(&test_idx))?,
    ))
}

/// Per-class shuffles with largest-remainder allocation so the train size is
/// still exactly `n_train`.
fn stratified_indices(dataset: &Dataset, n_train: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let n = dataset.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.schema.num_classes()];
    for i in 0..n {
        by_class[dataset.label(i)].push(i);
    }
    let share = n_train as f64 / n as f64;
    let mut quota: Vec<usize> = by_class
        .iter()
        .map(|c| (c.len() as f64 * share).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = by_class
        .iter()
        .enumerate()
        .map(|(k, c)| (k, c.len() as f64 * share - quota[k] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut left = n_train - quota.iter().sum::<usize>();
    for (k, _) in remainders {
        if left == 0 {
            break;
        }
        if quota[k] < by_class[k].len() {
            quota[k] += 1;
            left -= 1;
        }
    }
    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (k, mut members) in by_class.into_iter().enumerate() {
        members.shuffle(rng);
        let rest = members.split_off(quota[k]);
        train.extend(members);
        test.extend(rest);
    }
    train.shuffle(rng);
    test.shuffle(rng);
    (train, test)
}

/// Fills in equal-frequency bin edges for continuous features that have none,
/// using the values in `train`.
pub fn fit_bins(train: &Dataset, n_bins: usize) -> FeatureSchema {
    let mut schema = train.schema.clone();
    for (f, spec) in schema.features.iter_mut().enumerate() {
        if spec.kind != FeatureKind::Continuous || spec.bins.is_some() {
            continue;
        }
        let mut values: Vec<f64> = train
            .rows
            .iter()
            .filter_map(|r| r.values[f].as_f64())
            .collect();
        values.sort_by(f64::total_cmp);
        let mut edges: Vec<f64> = Vec::new();
        for k in 1..n_bins.max(1) {
            let edge = values[(k * values.len()) / n_bins];
            if edges.last().is_none_or(|last| edge > *last) && edge > values[0] {
                edges.push(edge);
            }
        }
        spec.bins = Some(edges);
    }
    schema
}

/// Splits, fits bins on the train partition and applies the finalized schema
/// to both partitions.
pub fn prepare(dataset: &Dataset, options: &SplitOptions, n_bins: usize) -> Result<(Dataset, Dataset), DatasetError> {
    let (train, test) = split_with(dataset, options)?;
    let schema = fit_bins(&train, n_bins);
    Ok((train.with_schema(schema.clone())?, test.with_schema(schema)?))
}

/// A data-derived probability with its support.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEstimate {
    pub probability: Option<f64>,
    pub support: usize,
    pub available: bool,
}

impl EmpiricalEstimate {
    pub fn unavailable(support: usize) -> Self {
        Self {
            probability: None,
            support,
            available: false,
        }
    }
}

/// Fraction of matching training rows labeled `decision`, or "not
/// available" when fewer than `min_support` (and at least one) rows match.
pub fn empirical_confidence(
    train: &Dataset,
    task: &Instance,
    decision: usize,
    argument: &Argument,
    min_support: usize,
) -> Result<EmpiricalEstimate, DatasetError> {
    if decision >= train.schema.num_classes() {
        return Err(DatasetError::ClassIndex(decision));
    }
    if let Some(bad) = argument.iter().find(|&f| f >= train.schema.arity()) {
        return Err(DatasetError::UnknownFeature(format!("#{bad}")));
    }
    let rows = train.matching_rows(task, argument);
    let support = rows.len();
    if support == 0 || support < min_support {
        return Ok(EmpiricalEstimate::unavailable(support));
    }
    let hits = rows.iter().filter(|&&r| train.label(r) == decision).count();
    Ok(EmpiricalEstimate {
        probability: Some(hits as f64 / support as f64),
        support,
        available: true,
    })
}

/// How non-argument feature values are drawn when marginalizing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Rows drawn uniformly from the whole training split.
    #[default]
    Independent,
    /// Rows drawn uniformly from training rows matching the argument.
    Conditional,
    /// Every training row used exactly once (exact expectation under the
    /// empirical distribution); ignores the sample count and seed.
    Exhaustive,
}

/// Row indices backing a set of completions.
pub fn sample_rows(
    train: &Dataset,
    task: &Instance,
    argument: &Argument,
    samples: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<usize>, DatasetError> {
    if samples == 0 {
        return Err(DatasetError::NoSamples);
    }
    let pool: Vec<usize> = match mode {
        SamplingMode::Exhaustive => return Ok((0..train.len()).collect()),
        SamplingMode::Independent => (0..train.len()).collect(),
        SamplingMode::Conditional => train.matching_rows(task, argument),
    };
    if pool.is_empty() {
        return Err(DatasetError::NoMatchingRows);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..samples)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect())
}

/// Draws completions: for each sampled row, its values on the features not
/// in `argument`, in schema order.
pub fn sample_background(
    train: &Dataset,
    task: &Instance,
    argument: &Argument,
    samples: usize,
    seed: u64,
    mode: SamplingMode,
) -> Result<Vec<Vec<Value>>, DatasetError> {
    let rows = sample_rows(train, task, argument, samples, seed, mode)?;
    let free: Vec<usize> = (0..train.schema.arity())
        .filter(|f| !argument.contains(*f))
        .collect();
    Ok(rows
        .into_iter()
        .map(|r| free.iter().map(|&f| train.rows[r].values[f].clone()).collect())
        .collect())
}
