//! Bayesian Improved Surname Geocoding.
//!
//! For surname `s` and geography unit `g` the posterior over categories is
//!
//! ```text
//! P(r | s, g) ∝ P(r | s) · P(g | r),     P(g | r) = counts[g][r] / totals[r]
//! ```
//!
//! Unknown surnames fall back to the national marginal `totals / Σ totals`.
//! When every product is zero the posterior is the marginal and the
//! `degenerate` flag is set.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;

use crate::llm::digest_fields;
use crate::prediction::{Engine, PredictedLabel, Prediction};
use crate::records::{normalize_name, CategoryScheme, NamePurpose, NameRecord};

const LOAD_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BisgError {
    #[error("{0}")]
    Table(String),
    #[error("unknown geography unit {0:?}")]
    GeoUnknown(String),
    #[error("record {id:?} has no geography at level {level:?}")]
    MissingGeography { id: String, level: String },
}

fn table_err(msg: impl Into<String>) -> BisgError {
    BisgError::Table(msg.into())
}

/// P(category | surname), keyed by lookup-normalized surname.
#[derive(Debug, Clone, PartialEq)]
pub struct SurnameTable {
    labels: Vec<String>,
    entries: HashMap<String, Vec<f64>>,
}

impl SurnameTable {
    /// Rows must be non-negative and sum to 1 within 1e-6; they are
    /// renormalized to sum to 1 exactly (up to rounding).
    pub fn new<I, S>(labels: Vec<String>, rows: I) -> Result<Self, BisgError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut entries = HashMap::new();
        for (raw, probs) in rows {
            let raw = raw.as_ref();
            if probs.len() != labels.len() {
                return Err(table_err(format!(
                    "surname {raw:?}: {} values for {} labels",
                    probs.len(),
                    labels.len()
                )));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(table_err(format!("surname {raw:?}: negative or non-finite probability")));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > LOAD_SUM_TOLERANCE {
                return Err(table_err(format!(
                    "surname {raw:?}: probabilities sum to {sum}, not 1"
                )));
            }
            let key = normalize_name(raw, NamePurpose::Lookup)
                .map_err(|e| table_err(format!("surname table: {e}")))?;
            let probs = probs.iter().map(|p| p / sum).collect();
            if entries.insert(key.clone(), probs).is_some() {
                return Err(table_err(format!("surname {key:?} appears twice after normalization")));
            }
        }
        Ok(Self { labels, entries })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Prior for a raw surname, normalized for lookup.
    pub fn prior(&self, surname: &str) -> Option<&[f64]> {
        let key = normalize_name(surname, NamePurpose::Lookup).ok()?;
        self.entries.get(&key).map(Vec::as_slice)
    }
}

/// Population counts by geography unit and category.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoTable {
    labels: Vec<String>,
    counts: BTreeMap<String, Vec<f64>>,
    totals: Vec<f64>,
}

impl GeoTable {
    pub fn new<I, S>(labels: Vec<String>, rows: I) -> Result<Self, BisgError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut counts = BTreeMap::new();
        let mut totals = vec![0.0; labels.len()];
        for (unit, row) in rows {
            let unit = unit.as_ref().trim().to_string();
            if row.len() != labels.len() {
                return Err(table_err(format!(
                    "unit {unit:?}: {} values for {} labels",
                    row.len(),
                    labels.len()
                )));
            }
            if let Some(c) = row.iter().find(|c| !c.is_finite() || **c < 0.0) {
                return Err(table_err(format!("unit {unit:?}: invalid count {c}")));
            }
            for (t, c) in totals.iter_mut().zip(&row) {
                *t += c;
            }
            if counts.insert(unit.clone(), row).is_some() {
                return Err(table_err(format!("unit {unit:?} appears twice")));
            }
        }
        if counts.is_empty() {
            return Err(table_err("geography table has no units"));
        }
        if totals.iter().sum::<f64>() <= 0.0 {
            return Err(table_err("geography table has zero total population"));
        }
        Ok(Self {
            labels,
            counts,
            totals,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn units(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    pub fn counts(&self, unit: &str) -> Option<&[f64]> {
        self.counts.get(unit.trim()).map(Vec::as_slice)
    }

    /// National share of each category: `totals / Σ totals`.
    pub fn marginal(&self) -> Vec<f64> {
        let sum: f64 = self.totals.iter().sum();
        self.totals.iter().map(|t| t / sum).collect()
    }
}

/// P(g | r) for every category: `counts[g][r] / totals[r]`, 0 where the
/// category total is 0.
pub fn geo_likelihood(table: &GeoTable, unit: &str) -> Result<Vec<f64>, BisgError> {
    let counts = table
        .counts(unit)
        .ok_or_else(|| BisgError::GeoUnknown(unit.to_string()))?;
    Ok(counts
        .iter()
        .zip(&table.totals)
        .map(|(c, t)| if *t > 0.0 { c / t } else { 0.0 })
        .collect())
}

/// Surname and geography tables over one label order, plus the marginal.
#[derive(Debug, Clone, PartialEq)]
pub struct BisgTables {
    surnames: SurnameTable,
    geo: GeoTable,
    marginal: Vec<f64>,
}

impl BisgTables {
    pub fn new(surnames: SurnameTable, geo: GeoTable) -> Result<Self, BisgError> {
        if surnames.labels != geo.labels {
            return Err(table_err(format!(
                "surname table labels {:?} differ from geography table labels {:?}",
                surnames.labels, geo.labels
            )));
        }
        let marginal = geo.marginal();
        Ok(Self {
            surnames,
            geo,
            marginal,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.surnames.labels
    }

    pub fn surnames(&self) -> &SurnameTable {
        &self.surnames
    }

    pub fn geo(&self) -> &GeoTable {
        &self.geo
    }

    pub fn marginal(&self) -> &[f64] {
        &self.marginal
    }

    fn check_scheme(&self, scheme: &CategoryScheme) -> Result<(), BisgError> {
        if self.labels() != scheme.labels() {
            return Err(table_err(format!(
                "tables were built for labels {:?}, scheme {:?} has {:?}",
                self.labels(),
                scheme.name(),
                scheme.labels()
            )));
        }
        Ok(())
    }
}

/// Reads a label-column CSV (`<key>,<label1>,...,<labelK>`), reordering the
/// value columns into scheme order.
fn read_label_csv(
    path: &Path,
    scheme: &CategoryScheme,
) -> Result<Vec<(String, Vec<f64>)>, BisgError> {
    let name = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| table_err(format!("{name}: {e}")))?;
    let header = rdr
        .headers()
        .map_err(|e| table_err(format!("{name}: {e}")))?
        .clone();
    // header column -> scheme index
    let mut slots = Vec::new();
    let mut seen = vec![false; scheme.len()];
    for col in header.iter().skip(1) {
        let idx = scheme
            .index_of(col)
            .ok_or_else(|| table_err(format!("{name}: column {col:?} is not a label of scheme {:?}", scheme.name())))?;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(table_err(format!("{name}: label {:?} has two columns", scheme.label(idx))));
        }
        slots.push(idx);
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(table_err(format!("{name}: no column for label {:?}", scheme.label(missing))));
    }

    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| table_err(format!("{name}: {e}")))?;
        let key = rec.get(0).unwrap_or_default().to_string();
        let mut values = vec![0.0; scheme.len()];
        if rec.len() != slots.len() + 1 {
            return Err(table_err(format!("{name} row {}: expected {} fields", line + 1, slots.len() + 1)));
        }
        for (field, &slot) in rec.iter().skip(1).zip(&slots) {
            values[slot] = field.trim().parse::<f64>().map_err(|_| {
                table_err(format!("{name} row {}: {field:?} is not a number", line + 1))
            })?;
        }
        rows.push((key, values));
    }
    Ok(rows)
}

/// Loads the surname (`surname,<labels>`) and geography (`unit,<labels>`)
/// tables for `scheme`.
pub fn load_bisg_tables(
    surname_path: impl AsRef<Path>,
    geo_path: impl AsRef<Path>,
    scheme: &CategoryScheme,
) -> Result<BisgTables, BisgError> {
    let labels = scheme.labels().to_vec();
    let surnames = SurnameTable::new(labels.clone(), read_label_csv(surname_path.as_ref(), scheme)?)?;
    let geo = GeoTable::new(labels, read_label_csv(geo_path.as_ref(), scheme)?)?;
    BisgTables::new(surnames, geo)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Posterior {
    pub probs: Vec<f64>,
    /// Smallest index attaining the maximum.
    pub mode_index: usize,
    pub surname_known: bool,
    /// The Bayes normalizer was zero and `probs` is the marginal.
    pub degenerate: bool,
}

fn mode_index(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// Posterior over scheme labels for a surname and, optionally, a geography
/// unit. Without a unit the result is the surname prior itself.
pub fn bisg_posterior(
    surname: &str,
    unit: Option<&str>,
    tables: &BisgTables,
    scheme: &CategoryScheme,
) -> Result<Posterior, BisgError> {
    tables.check_scheme(scheme)?;
    let known = tables.surnames.prior(surname);
    let prior = known.unwrap_or(&tables.marginal);

    let (probs, degenerate) = match unit {
        None => (prior.to_vec(), false),
        Some(unit) => {
            let lik = geo_likelihood(&tables.geo, unit)?;
            let joint: Vec<f64> = prior.iter().zip(&lik).map(|(p, l)| p * l).collect();
            let z: f64 = joint.iter().sum();
            if z > 0.0 {
                (joint.iter().map(|j| j / z).collect(), false)
            } else {
                (tables.marginal.clone(), true)
            }
        }
    };
    Ok(Posterior {
        mode_index: mode_index(&probs),
        probs,
        surname_known: known.is_some(),
        degenerate,
    })
}

/// Where a BISG classification takes its geography from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeoMode {
    SurnameOnly,
    Level(String),
}

/// Classifies one record as the posterior mode, ties to the earliest label.
pub fn classify_bisg(
    record: &NameRecord,
    tables: &BisgTables,
    scheme: &CategoryScheme,
    mode: &GeoMode,
) -> Result<Prediction, BisgError> {
    let unit = match mode {
        GeoMode::SurnameOnly => None,
        GeoMode::Level(level) => Some(record.geo(level).ok_or_else(|| BisgError::MissingGeography {
            id: record.id.clone(),
            level: level.clone(),
        })?),
    };
    let post = bisg_posterior(&record.surname, unit, tables, scheme)?;
    let key = normalize_name(&record.surname, NamePurpose::Lookup).unwrap_or_default();
    Ok(Prediction {
        id: record.id.clone(),
        label: PredictedLabel::Category(scheme.label(post.mode_index).to_string()),
        raw_response: String::new(),
        engine: Engine::Bisg,
        model_id: match mode {
            GeoMode::SurnameOnly => "bisg:surname".to_string(),
            GeoMode::Level(level) => format!("bisg:surname+{level}"),
        },
        prompt_hash: digest_fields(&["bisg", &key, unit.unwrap_or("")]),
        cached: false,
        probs: Some(post.probs),
        error: if post.degenerate {
            Some("zero Bayes normalizer; national marginal used".to_string())
        } else {
            None
        },
    })
}
