use std::collections::HashMap;

use serde::Serialize;

use super::{aligned, pct, MetricError};
use crate::prediction::{PredictedLabel, Prediction};
use crate::records::{CategoryScheme, RecordSet};

/// Rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub unparseable_per_truth: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(scheme: &CategoryScheme) -> Self {
        let k = scheme.len();
        Self {
            labels: scheme.labels().to_vec(),
            counts: vec![vec![0; k]; k],
            unparseable_per_truth: vec![0; k],
        }
    }

    /// Adds one observation; `predicted = None` is UNPARSEABLE.
    pub fn record(&mut self, truth: usize, predicted: Option<usize>) {
        match predicted {
            Some(p) => self.counts[truth][p] += 1,
            None => self.unparseable_per_truth[truth] += 1,
        }
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    /// Truth-class size including UNPARSEABLE predictions.
    pub fn class_total(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum::<u64>() + self.unparseable_per_truth[truth]
    }

    pub fn total(&self) -> u64 {
        (0..self.labels.len()).map(|r| self.class_total(r)).sum()
    }

    pub fn unparseable(&self) -> u64 {
        self.unparseable_per_truth.iter().sum()
    }
}

/// Tabulates predictions against the truth labels of `truths`, matched by id.
pub fn confusion_matrix(
    preds: &[Prediction],
    truths: &RecordSet,
) -> Result<ConfusionMatrix, MetricError> {
    let scheme = truths.scheme();
    let by_id: HashMap<&str, Option<&str>> = truths
        .iter()
        .map(|r| (r.id.as_str(), r.truth_label.as_deref()))
        .collect();
    let mut seen = std::collections::HashSet::with_capacity(preds.len());
    let mut m = ConfusionMatrix::zeros(scheme);
    for p in preds {
        let truth = by_id
            .get(p.id.as_str())
            .ok_or_else(|| MetricError::Align(p.id.clone()))?
            .ok_or_else(|| MetricError::MissingTruth(p.id.clone()))?;
        if !seen.insert(p.id.as_str()) {
            return Err(MetricError::DuplicatePrediction(p.id.clone()));
        }
        let t = scheme
            .label_index(truth)
            .ok_or_else(|| MetricError::UnknownLabel(truth.to_string()))?;
        let predicted = match &p.label {
            PredictedLabel::Unparseable => None,
            PredictedLabel::Category(c) => Some(
                scheme
                    .label_index(c)
                    .ok_or_else(|| MetricError::UnknownLabel(c.clone()))?,
            ),
        };
        m.record(t, predicted);
    }
    Ok(m)
}

/// Unweighted mean.
pub fn macro_average(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: u64,
    pub accuracy: f64,
    /// `None` for classes with no records.
    pub per_class_recall: Vec<Option<f64>>,
    /// Mean over classes that have records.
    pub macro_recall: f64,
    pub unparseable: u64,
    pub matrix: ConfusionMatrix,
}

pub fn evaluate(matrix: &ConfusionMatrix) -> Result<EvalReport, MetricError> {
    let n = matrix.total();
    if n == 0 {
        return Err(MetricError::Empty("confusion matrix has no observations".into()));
    }
    let per_class_recall: Vec<Option<f64>> = (0..matrix.labels.len())
        .map(|r| {
            let denom = matrix.class_total(r);
            (denom > 0).then(|| matrix.counts[r][r] as f64 / denom as f64)
        })
        .collect();
    let present: Vec<f64> = per_class_recall.iter().flatten().copied().collect();
    Ok(EvalReport {
        n,
        accuracy: matrix.trace() as f64 / n as f64,
        macro_recall: macro_average(&present),
        per_class_recall,
        unparseable: matrix.unparseable(),
        matrix: matrix.clone(),
    })
}

impl EvalReport {
    pub fn render_text(&self) -> String {
        let m = &self.matrix;
        let mut rows = vec![{
            let mut h = vec!["truth \\ predicted".to_string()];
            h.extend(m.labels.iter().cloned());
            h.extend(["UNPARSEABLE".to_string(), "recall %".to_string()]);
            h
        }];
        for (r, label) in m.labels.iter().enumerate() {
            let mut row = vec![label.clone()];
            row.extend(m.counts[r].iter().map(u64::to_string));
            row.push(m.unparseable_per_truth[r].to_string());
            row.push(self.per_class_recall[r].map_or("-".into(), pct));
            rows.push(row);
        }
        format!(
            "{}\nn = {}   accuracy = {}%   macro recall = {}%   unparseable = {}\n",
            aligned(&rows),
            self.n,
            pct(self.accuracy),
            pct(self.macro_recall),
            self.unparseable
        )
    }
}
