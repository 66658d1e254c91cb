use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SchemeError {
    #[error("cannot read scheme file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed scheme document: {0}")]
    Format(#[from] serde_json::Error),
    #[error("scheme needs at least 2 labels, got {0}")]
    TooFewLabels(usize),
    #[error("label {0:?} is empty")]
    EmptyLabel(String),
    #[error("labels {first:?} and {second:?} collide after case-folding")]
    DuplicateLabel { first: String, second: String },
    #[error("alias {alias:?} points at unknown label {target:?}")]
    UnknownAliasTarget { alias: String, target: String },
    #[error("alias {alias:?} is ambiguous: maps to both {first:?} and {second:?}")]
    ConflictingAlias {
        alias: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Deserialize)]
struct SchemeDoc {
    name: String,
    labels: Vec<String>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
}

fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

/// An ordered, named set of target labels with aliases.
///
/// Label order is significant: it fixes prompt category order, report order
/// and tie-breaking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryScheme {
    name: String,
    labels: Vec<String>,
    /// Case-folded alias -> label index.
    #[serde(skip)]
    alias_index: HashMap<String, usize>,
    /// Case-folded label -> label index.
    #[serde(skip)]
    label_index: HashMap<String, usize>,
    aliases: BTreeMap<String, String>,
}

impl CategoryScheme {
    /// A scheme with no aliases.
    pub fn from_labels<L, S>(name: impl Into<String>, labels: L) -> Result<Self, SchemeError>
    where
        L: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self::new(name, labels, std::iter::empty::<(&str, &str)>())
    }

    pub fn new<L, A, S, T>(name: impl Into<String>, labels: L, aliases: A) -> Result<Self, SchemeError>
    where
        L: IntoIterator<Item = S>,
        A: IntoIterator<Item = (T, T)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let labels: Vec<String> = labels
            .into_iter()
            .map(|l| l.as_ref().trim().to_string())
            .collect();
        if labels.len() < 2 {
            return Err(SchemeError::TooFewLabels(labels.len()));
        }
        let mut label_index: HashMap<String, usize> = HashMap::new();
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(SchemeError::EmptyLabel(label.clone()));
            }
            if let Some(&prev) = label_index.get(&fold(label)) {
                return Err(SchemeError::DuplicateLabel {
                    first: labels[prev].clone(),
                    second: label.clone(),
                });
            }
            label_index.insert(fold(label), i);
        }

        let mut alias_index = HashMap::new();
        let mut alias_table = BTreeMap::new();
        for (alias, target) in aliases {
            let (alias, target) = (alias.as_ref().trim(), target.as_ref());
            let idx = *label_index
                .get(&fold(target))
                .ok_or_else(|| SchemeError::UnknownAliasTarget {
                    alias: alias.to_string(),
                    target: target.to_string(),
                })?;
            let key = fold(alias);
            if let Some(&existing) = label_index.get(&key).or(alias_index.get(&key)) {
                if existing != idx {
                    return Err(SchemeError::ConflictingAlias {
                        alias: alias.to_string(),
                        first: labels[existing].clone(),
                        second: labels[idx].clone(),
                    });
                }
            }
            alias_index.insert(key, idx);
            alias_table.insert(alias.to_string(), labels[idx].clone());
        }

        Ok(Self {
            name: name.into(),
            labels,
            alias_index,
            label_index,
            aliases: alias_table,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, SchemeError> {
        let doc: SchemeDoc = serde_json::from_str(text)?;
        Self::new(doc.name, doc.labels, doc.aliases)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    /// Index of a canonical label, matched case-insensitively.
    pub fn label_index(&self, text: &str) -> Option<usize> {
        self.label_index.get(&fold(text)).copied()
    }

    /// Index of the label an alias points at, matched case-insensitively.
    pub fn alias_index(&self, text: &str) -> Option<usize> {
        self.alias_index.get(&fold(text)).copied()
    }

    /// Canonical label or alias -> label index.
    pub fn index_of(&self, text: &str) -> Option<usize> {
        self.label_index(text).or_else(|| self.alias_index(text))
    }

    /// Canonical label or alias -> canonical label.
    pub fn resolve(&self, text: &str) -> Option<&str> {
        self.index_of(text).map(|i| self.labels[i].as_str())
    }
}

/// Reads a scheme document `{"name", "labels", "aliases"}`.
pub fn load_scheme(path: impl AsRef<Path>) -> Result<CategoryScheme, SchemeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SchemeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    CategoryScheme::from_json(&text)
}
