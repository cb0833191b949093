use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureSchema, Instance, Value};

/// A subset of one task's feature assignments, stored as schema indices.
///
/// Values are never stored: they are always read back from the task the
/// argument is attached to, so an argument cannot carry hypothetical values.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Argument(BTreeSet<usize>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArgumentError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` listed twice")]
    Duplicate(String),
    #[error("feature index {index} out of range for {arity} features")]
    OutOfRange { index: usize, arity: usize },
}

impl Argument {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every feature of an `arity`-feature task.
    pub fn full(arity: usize) -> Self {
        Self((0..arity).collect())
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(
        indices: I,
        arity: usize,
    ) -> Result<Self, ArgumentError> {
        let mut set = BTreeSet::new();
        for index in indices {
            if index >= arity {
                return Err(ArgumentError::OutOfRange { index, arity });
            }
            set.insert(index);
        }
        Ok(Self(set))
    }

    pub fn from_names<S: AsRef<str>>(
        schema: &FeatureSchema,
        names: &[S],
    ) -> Result<Self, ArgumentError> {
        let mut set = BTreeSet::new();
        for name in names {
            let name = name.as_ref();
            let index = schema
                .feature_index(name)
                .ok_or_else(|| ArgumentError::UnknownFeature(name.to_string()))?;
            if !set.insert(index) {
                return Err(ArgumentError::Duplicate(name.to_string()));
            }
        }
        Ok(Self(set))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_full(&self, arity: usize) -> bool {
        self.0.len() == arity
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.0.contains(&feature)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    /// A copy with `feature` added.
    pub fn with(&self, feature: usize) -> Self {
        let mut set = self.0.clone();
        set.insert(feature);
        Self(set)
    }

    /// A copy with `feature` removed.
    pub fn without(&self, feature: usize) -> Self {
        let mut set = self.0.clone();
        set.remove(&feature);
        Self(set)
    }

    pub fn is_subset(&self, other: &Argument) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn names(&self, schema: &FeatureSchema) -> Vec<String> {
        self.iter()
            .map(|i| schema.features[i].name.clone())
            .collect()
    }

    /// The `(feature name, value)` pairs this argument selects from `task`.
    pub fn assignments<'a>(
        &'a self,
        schema: &'a FeatureSchema,
        task: &'a Instance,
    ) -> impl Iterator<Item = (&'a str, &'a Value)> + 'a {
        self.iter()
            .map(move |i| (schema.features[i].name.as_str(), &task.values[i]))
    }
}

impl FromIterator<usize> for Argument {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Display for Argument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.0.iter().enumerate() {
            if n > 0 {
                write!(f, ", ")?;
            }
            write!(f, "X{i}")?;
        }
        write!(f, "}}")
    }
}
