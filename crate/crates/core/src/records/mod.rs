//! Domain types, category schemes, tabular ingestion, name normalization and
//! stratified sampling.

mod ingest;
mod normalize;
mod sample;
mod scheme;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use ingest::{
    ingest_reader, ingest_records, write_records, ColumnMapping, IngestError, IngestReport,
    RecordFormat, RejectReason, RejectedRow,
};
pub use normalize::{normalize_name, NamePurpose, NormalizeError};
pub use sample::{stratified_sample, SampleError, StratumField};
pub use scheme::{load_scheme, CategoryScheme, SchemeError};

/// One person: name parts, geography, optional metadata and ground truth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NameRecord {
    pub id: String,
    pub given_names: String,
    pub surname: String,
    /// Geography by level (`county`, `state`, `zip`, `region`, ...).
    pub geography: BTreeMap<String, String>,
    pub age: Option<u32>,
    pub gender: Option<String>,
    pub party: Option<String>,
    /// Neighbourhood median household income in US dollars.
    pub income: Option<f64>,
    /// Canonical label of the record's scheme.
    pub truth_label: Option<String>,
}

impl NameRecord {
    /// Given names and surname joined by a single space, as sent in prompts.
    pub fn display_name(&self) -> String {
        let joined = format!("{} {}", self.given_names, self.surname);
        joined.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    pub fn geo(&self, level: &str) -> Option<&str> {
        self.geography.get(level).map(String::as_str)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RecordSetError {
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("record {id:?} carries truth label {label:?}, which is not a canonical label of scheme {scheme:?}")]
    UnknownTruth {
        id: String,
        label: String,
        scheme: String,
    },
}

/// Records sharing one category scheme, in a fixed order.
#[derive(Debug, Clone)]
pub struct RecordSet {
    records: Vec<NameRecord>,
    scheme: Arc<CategoryScheme>,
    source: String,
}

impl RecordSet {
    pub fn new(
        records: Vec<NameRecord>,
        scheme: Arc<CategoryScheme>,
        source: impl Into<String>,
    ) -> Result<Self, RecordSetError> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(RecordSetError::DuplicateId(r.id.clone()));
            }
            if let Some(label) = &r.truth_label {
                if !scheme.labels().iter().any(|l| l == label) {
                    return Err(RecordSetError::UnknownTruth {
                        id: r.id.clone(),
                        label: label.clone(),
                        scheme: scheme.name().to_string(),
                    });
                }
            }
        }
        Ok(Self {
            records,
            scheme,
            source: source.into(),
        })
    }

    pub fn records(&self) -> &[NameRecord] {
        &self.records
    }

    pub fn scheme(&self) -> &Arc<CategoryScheme> {
        &self.scheme
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, NameRecord> {
        self.records.iter()
    }

    pub fn into_records(self) -> Vec<NameRecord> {
        self.records
    }
}
