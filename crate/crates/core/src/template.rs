//! Fixed sentence templates with named slots.
//!
//! Dialogue text is produced only by substituting slots into catalog
//! entries, never generated freely. The built-in catalog is compiled in
//! from `templates.txt`; [`Catalog::parse`] accepts replacement wording.

use std::collections::BTreeMap;
use std::sync::OnceLock;

pub const BUILTIN_CATALOG: &str = include_str!("templates.txt");

pub const INC_REFLECT: &str = "T-INC-REFLECT";
pub const INC_SUGGEST: &str = "T-INC-SUGGEST";
pub const INC_TRIANGULATE: &str = "T-INC-TRIANGULATE";
pub const UNR_REFLECT: &str = "T-UNR-REFLECT";
pub const UNR_SUGGEST: &str = "T-UNR-SUGGEST";
pub const UNR_TRIANGULATE: &str = "T-UNR-TRIANGULATE";
pub const CONF_REFLECT: &str = "T-CONF-REFLECT";
pub const CONF_SUGGEST: &str = "T-CONF-SUGGEST";
pub const CONF_TRIANGULATE: &str = "T-CONF-TRIANGULATE";
pub const AGREE: &str = "T-AGREE";
pub const NO_ISSUES: &str = "T-NO-ISSUES";
pub const UPDATE: &str = "T-UPDATE";
pub const RECOMMEND: &str = "T-RECOMMEND";
pub const ANALYZE: &str = "T-ANALYZE";
pub const SKIP: &str = "T-SKIP";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("catalog line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("template `{0}` defined twice")]
    Duplicate(String),
    #[error("unknown template `{0}`")]
    Unknown(String),
    #[error("template `{template}` is missing slot `{slot}`")]
    MissingSlot { template: String, slot: String },
    #[error("template `{0}` has an unterminated slot")]
    Unterminated(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Catalog {
    entries: BTreeMap<String, String>,
}

/// Slot values for one rendering. The optional delta drives `{a|b}`
/// choices and the default `{points}` slot.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Slots {
    values: BTreeMap<String, String>,
    delta: Option<f64>,
}

impl Slots {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<String>) -> Self {
        self.values.insert(name.to_string(), value.into());
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = Some(delta);
        self
    }
}

/// A probability change as whole percentage points, rounded half away
/// from zero.
pub fn percentage_points(delta: f64) -> i64 {
    (delta * 100.0).round() as i64
}

/// A probability as a whole percent, rounded half away from zero.
pub fn percent(p: f64) -> i64 {
    (p * 100.0).round() as i64
}

/// Feature names as they appear inside messages.
pub fn join_features<S: AsRef<str>>(names: &[S]) -> String {
    names.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ")
}

impl Catalog {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, body) = line.split_once(" = ").ok_or_else(|| TemplateError::Syntax {
                line: n + 1,
                message: "expected `ID = text`".into(),
            })?;
            let id = id.trim();
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(TemplateError::Syntax {
                    line: n + 1,
                    message: format!("bad template id `{id}`"),
                });
            }
            if entries.insert(id.to_string(), body.to_string()).is_some() {
                return Err(TemplateError::Duplicate(id.to_string()));
            }
        }
        Ok(Self { entries })
    }

    pub fn builtin() -> &'static Catalog {
        static CATALOG: OnceLock<Catalog> = OnceLock::new();
        CATALOG.get_or_init(|| Catalog::parse(BUILTIN_CATALOG).expect("built-in catalog parses"))
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn render(&self, id: &str, slots: &Slots) -> Result<String, TemplateError> {
        let body = self.get(id).ok_or_else(|| TemplateError::Unknown(id.to_string()))?;
        let missing = |slot: &str| TemplateError::MissingSlot {
            template: id.to_string(),
            slot: slot.to_string(),
        };
        let mut out = String::with_capacity(body.len() + 32);
        let mut rest = body;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| TemplateError::Unterminated(id.to_string()))?
                + open;
            let inner = &rest[open + 1..close];
            if let Some((positive, negative)) = inner.split_once('|') {
                let delta = slots.delta.ok_or_else(|| missing("delta"))?;
                out.push_str(if delta >= 0.0 { positive } else { negative });
            } else if let Some(value) = slots.values.get(inner) {
                out.push_str(value);
            } else if inner == "points" {
                let delta = slots.delta.ok_or_else(|| missing("points"))?;
                out.push_str(&percentage_points(delta).abs().to_string());
            } else {
                return Err(missing(inner));
            }
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

pub fn render(id: &str, slots: &Slots) -> Result<String, TemplateError> {
    Catalog::builtin().render(id, slots)
}
