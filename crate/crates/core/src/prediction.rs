//! The per-record output shared by every engine.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

/// Sentinel written in place of a label when a response maps to no category.
pub const UNPARSEABLE: &str = "UNPARSEABLE";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum PredictedLabel {
    Category(String),
    Unparseable,
}

impl PredictedLabel {
    pub fn category(&self) -> Option<&str> {
        match self {
            PredictedLabel::Category(c) => Some(c),
            PredictedLabel::Unparseable => None,
        }
    }

    pub fn is_unparseable(&self) -> bool {
        matches!(self, PredictedLabel::Unparseable)
    }
}

impl From<String> for PredictedLabel {
    fn from(s: String) -> Self {
        if s == UNPARSEABLE {
            PredictedLabel::Unparseable
        } else {
            PredictedLabel::Category(s)
        }
    }
}

impl From<PredictedLabel> for String {
    fn from(l: PredictedLabel) -> Self {
        match l {
            PredictedLabel::Category(c) => c,
            PredictedLabel::Unparseable => UNPARSEABLE.to_string(),
        }
    }
}

impl fmt::Display for PredictedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.category().unwrap_or(UNPARSEABLE))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Bisg,
    Llm,
    Student,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Bisg => "bisg",
            Engine::Llm => "llm",
            Engine::Student => "student",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: PredictedLabel,
    #[serde(default)]
    pub raw_response: String,
    pub engine: Engine,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub prompt_hash: String,
    #[serde(default)]
    pub cached: bool,
    /// Posterior over scheme labels, for engines that produce one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    /// Why the label is UNPARSEABLE when the backend never answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum PredictionIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

/// Writes one JSON object per line.
pub fn write_predictions(path: impl AsRef<Path>, preds: &[Prediction]) -> Result<(), PredictionIoError> {
    let path = path.as_ref();
    let io = |source| PredictionIoError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for p in preds {
        serde_json::to_writer(&mut w, p).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>, PredictionIoError> {
    read_json_lines(path)
}

pub(crate) fn read_json_lines<T: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<Vec<T>, PredictionIoError> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let file = File::open(path).map_err(|source| PredictionIoError::Io {
        path: name.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PredictionIoError::Io {
            path: name.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| PredictionIoError::Parse {
            path: name.clone(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}
