use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::normalize::{normalize_name, NamePurpose};
use super::{CategoryScheme, NameRecord, RecordSet, RecordSetError};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed column mapping: {0}")]
    Mapping(#[from] serde_json::Error),
    #[error("mapped column {column:?} (field {field}) is missing from the header of {source_name}")]
    MissingColumn {
        field: String,
        column: String,
        source_name: String,
    },
    #[error("cannot parse header of {source_name}: {message}")]
    Header { source_name: String, message: String },
    #[error("cannot write records: {0}")]
    Write(String),
    #[error(transparent)]
    RecordSet(#[from] RecordSetError),
}

/// Column names in the input file for each [`NameRecord`] field.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub id: String,
    #[serde(default)]
    pub given_names: Option<String>,
    pub surname: String,
    /// Level name -> column. The keys are the declared geography levels.
    #[serde(default)]
    pub geography: BTreeMap<String, String>,
    #[serde(default)]
    pub age: Option<String>,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub party: Option<String>,
    #[serde(default)]
    pub income: Option<String>,
    #[serde(default)]
    pub truth: Option<String>,
}

impl ColumnMapping {
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// `(field, column)` for every mapped column, in output order.
    pub fn columns(&self) -> Vec<(String, &str)> {
        let mut out = vec![("id".to_string(), self.id.as_str())];
        if let Some(c) = &self.given_names {
            out.push(("given_names".into(), c));
        }
        out.push(("surname".into(), &self.surname));
        for (level, c) in &self.geography {
            out.push((format!("geography.{level}"), c));
        }
        for (field, col) in [
            ("age", &self.age),
            ("gender", &self.gender),
            ("party", &self.party),
            ("income", &self.income),
            ("truth", &self.truth),
        ] {
            if let Some(c) = col {
                out.push((field.to_string(), c));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordFormat {
    Csv { delimiter: u8 },
    JsonLines,
}

impl RecordFormat {
    /// `.jsonl`/`.ndjson`/`.json` are JSON-lines, `.tsv` is tab-separated,
    /// anything else is comma-separated.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("jsonl" | "ndjson" | "json") => RecordFormat::JsonLines,
            Some("tsv" | "tab") => RecordFormat::Csv { delimiter: b'\t' },
            _ => RecordFormat::Csv { delimiter: b',' },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum RejectReason {
    EmptyId,
    DuplicateId(String),
    EmptySurname,
    InvalidAge(String),
    InvalidIncome(String),
    UnknownTruthLabel(String),
    Malformed(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::EmptyId => write!(f, "empty id"),
            RejectReason::DuplicateId(id) => write!(f, "duplicate id {id:?}"),
            RejectReason::EmptySurname => write!(f, "empty surname"),
            RejectReason::InvalidAge(v) => write!(f, "invalid age {v:?}"),
            RejectReason::InvalidIncome(v) => write!(f, "invalid income {v:?}"),
            RejectReason::UnknownTruthLabel(v) => write!(f, "unknown truth label {v:?}"),
            RejectReason::Malformed(m) => write!(f, "malformed row: {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRow {
    /// 1-based data row number, header excluded.
    pub row: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub source: String,
    pub rows: usize,
    pub accepted: usize,
    pub rejects: Vec<RejectedRow>,
}

impl IngestReport {
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "{}: {} rows, {} accepted, {} rejected\n",
            self.source,
            self.rows,
            self.accepted,
            self.rejects.len()
        );
        for r in &self.rejects {
            out.push_str(&format!("  row {:>8}  {}\n", r.row, r.reason));
        }
        out
    }
}

/// Streams a CSV/TSV or JSON-lines file into a [`RecordSet`].
///
/// Rows that violate record invariants are skipped and listed in the report;
/// only a missing mapped column or an unreadable file is fatal.
pub fn ingest_records(
    path: impl AsRef<Path>,
    mapping: &ColumnMapping,
    scheme: Arc<CategoryScheme>,
) -> Result<(RecordSet, IngestReport), IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_reader(
        BufReader::new(file),
        RecordFormat::from_path(path),
        mapping,
        scheme,
        &path.display().to_string(),
    )
}

pub fn ingest_reader<R: Read>(
    reader: R,
    format: RecordFormat,
    mapping: &ColumnMapping,
    scheme: Arc<CategoryScheme>,
    source: &str,
) -> Result<(RecordSet, IngestReport), IngestError> {
    let mut builder = Builder::new(mapping, &scheme);
    match format {
        RecordFormat::Csv { delimiter } => {
            let mut rdr = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .flexible(true)
                .from_reader(reader);
            let headers = rdr
                .headers()
                .map_err(|e| IngestError::Header {
                    source_name: source.to_string(),
                    message: e.to_string(),
                })?
                .clone();
            let index: HashMap<&str, usize> =
                headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
            let mut positions = HashMap::new();
            for (field, column) in mapping.columns() {
                let pos = *index.get(column).ok_or_else(|| IngestError::MissingColumn {
                    field,
                    column: column.to_string(),
                    source_name: source.to_string(),
                })?;
                positions.insert(column.to_string(), pos);
            }
            let mut row = csv::StringRecord::new();
            loop {
                match rdr.read_record(&mut row) {
                    Ok(false) => break,
                    Ok(true) => builder.push(|col| {
                        positions
                            .get(col)
                            .and_then(|&i| row.get(i))
                            .map(str::to_string)
                    }),
                    Err(e) if e.is_io_error() => {
                        return Err(IngestError::Io {
                            path: source.to_string(),
                            source: std::io::Error::other(e.to_string()),
                        })
                    }
                    Err(e) => builder.reject(RejectReason::Malformed(e.to_string())),
                }
            }
        }
        RecordFormat::JsonLines => {
            let mut checked_columns = false;
            for line in BufReader::new(reader).lines() {
                let line = line.map_err(|e| IngestError::Io {
                    path: source.to_string(),
                    source: e,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                let obj = match serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&line) {
                    Ok(o) => o,
                    Err(e) => {
                        builder.reject(RejectReason::Malformed(e.to_string()));
                        continue;
                    }
                };
                if !checked_columns {
                    // The first object acts as the header for column checks.
                    for (field, column) in mapping.columns() {
                        if !obj.contains_key(column) {
                            return Err(IngestError::MissingColumn {
                                field,
                                column: column.to_string(),
                                source_name: source.to_string(),
                            });
                        }
                    }
                    checked_columns = true;
                }
                builder.push(|col| match obj.get(col) {
                    None | Some(serde_json::Value::Null) => None,
                    Some(serde_json::Value::String(s)) => Some(s.clone()),
                    Some(other) => Some(other.to_string()),
                });
            }
        }
    }
    builder.finish(Arc::clone(&scheme), source)
}

struct Builder<'a> {
    mapping: &'a ColumnMapping,
    scheme: &'a CategoryScheme,
    records: Vec<NameRecord>,
    rejects: Vec<RejectedRow>,
    seen: HashSet<String>,
    rows: usize,
}

fn is_missing(v: &str) -> bool {
    let v = v.trim();
    v.is_empty() || v.eq_ignore_ascii_case("na") || v.eq_ignore_ascii_case("nan") || v.eq_ignore_ascii_case("null")
}

impl<'a> Builder<'a> {
    fn new(mapping: &'a ColumnMapping, scheme: &'a CategoryScheme) -> Self {
        Self {
            mapping,
            scheme,
            records: Vec::new(),
            rejects: Vec::new(),
            seen: HashSet::new(),
            rows: 0,
        }
    }

    fn reject(&mut self, reason: RejectReason) {
        self.rows += 1;
        self.rejects.push(RejectedRow {
            row: self.rows,
            reason,
        });
    }

    fn push<F: Fn(&str) -> Option<String>>(&mut self, get: F) {
        match self.build(&get) {
            Ok(rec) => {
                self.rows += 1;
                self.seen.insert(rec.id.clone());
                self.records.push(rec);
            }
            Err(reason) => self.reject(reason),
        }
    }

    fn build<F: Fn(&str) -> Option<String>>(&self, get: &F) -> Result<NameRecord, RejectReason> {
        let m = self.mapping;
        let opt = |col: &Option<String>| -> Option<String> {
            col.as_deref()
                .and_then(get)
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
        };

        let id = get(&m.id).map(|v| v.trim().to_string()).unwrap_or_default();
        if id.is_empty() {
            return Err(RejectReason::EmptyId);
        }
        if self.seen.contains(&id) {
            return Err(RejectReason::DuplicateId(id));
        }
        let surname = get(&m.surname)
            .and_then(|s| normalize_name(&s, NamePurpose::Display).ok())
            .ok_or(RejectReason::EmptySurname)?;
        let given_names = opt(&m.given_names)
            .and_then(|g| normalize_name(&g, NamePurpose::Display).ok())
            .unwrap_or_default();

        let mut geography = BTreeMap::new();
        for (level, col) in &m.geography {
            if let Some(v) = get(col) {
                let v = v.split_whitespace().collect::<Vec<_>>().join(" ");
                if !v.is_empty() {
                    geography.insert(level.clone(), v);
                }
            }
        }

        let age = match opt(&m.age).filter(|v| !is_missing(v)) {
            None => None,
            Some(v) => Some(v.parse::<u32>().map_err(|_| RejectReason::InvalidAge(v.clone()))?),
        };
        let income = match opt(&m.income).filter(|v| !is_missing(v)) {
            None => None,
            Some(v) => match v.parse::<f64>() {
                Ok(x) if x.is_finite() && x > 0.0 => Some(x),
                _ => return Err(RejectReason::InvalidIncome(v)),
            },
        };
        let truth_label = match opt(&m.truth) {
            None => None,
            Some(v) => Some(
                self.scheme
                    .resolve(&v)
                    .ok_or(RejectReason::UnknownTruthLabel(v.clone()))?
                    .to_string(),
            ),
        };

        Ok(NameRecord {
            id,
            given_names,
            surname,
            geography,
            age,
            gender: opt(&m.gender),
            party: opt(&m.party),
            income,
            truth_label,
        })
    }

    fn finish(
        self,
        scheme: Arc<CategoryScheme>,
        source: &str,
    ) -> Result<(RecordSet, IngestReport), IngestError> {
        let report = IngestReport {
            source: source.to_string(),
            rows: self.rows,
            accepted: self.records.len(),
            rejects: self.rejects,
        };
        let set = RecordSet::new(self.records, scheme, source)?;
        Ok((set, report))
    }
}

/// Writes records back out under the mapping's column names, so the same
/// mapping reads the file again. JSON-lines when the path says so, CSV
/// otherwise.
pub fn write_records(
    path: impl AsRef<Path>,
    records: &[NameRecord],
    mapping: &ColumnMapping,
) -> Result<(), IngestError> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = File::create(path).map_err(io_err)?;
    let columns = mapping.columns();
    let values = |r: &NameRecord| -> Vec<String> {
        columns
            .iter()
            .map(|(field, _)| field_value(r, field).unwrap_or_default())
            .collect()
    };
    match RecordFormat::from_path(path) {
        RecordFormat::JsonLines => {
            let mut w = BufWriter::new(file);
            for r in records {
                let mut obj = serde_json::Map::new();
                for ((field, col), v) in columns.iter().zip(values(r)) {
                    let value = if v.is_empty() && field != "id" && field != "surname" {
                        serde_json::Value::Null
                    } else {
                        serde_json::Value::String(v)
                    };
                    obj.insert(col.to_string(), value);
                }
                serde_json::to_writer(&mut w, &obj).map_err(|e| IngestError::Write(e.to_string()))?;
                w.write_all(b"\n").map_err(io_err)?;
            }
            w.flush().map_err(io_err)?;
        }
        RecordFormat::Csv { delimiter } => {
            let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(file);
            let write_err = |e: csv::Error| IngestError::Write(e.to_string());
            w.write_record(columns.iter().map(|(_, c)| *c)).map_err(write_err)?;
            for r in records {
                w.write_record(values(r)).map_err(write_err)?;
            }
            w.flush().map_err(io_err)?;
        }
    }
    Ok(())
}

fn field_value(r: &NameRecord, field: &str) -> Option<String> {
    match field {
        "id" => Some(r.id.clone()),
        "given_names" => Some(r.given_names.clone()),
        "surname" => Some(r.surname.clone()),
        "age" => r.age.map(|a| a.to_string()),
        "gender" => r.gender.clone(),
        "party" => r.party.clone(),
        "income" => r.income.map(|x| x.to_string()),
        "truth" => r.truth_label.clone(),
        other => other
            .strip_prefix("geography.")
            .and_then(|level| r.geography.get(level).cloned()),
    }
}
