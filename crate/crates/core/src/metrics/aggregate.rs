use std::collections::BTreeMap;

use serde::Serialize;

use super::{aligned, MetricError};
use crate::prediction::{PredictedLabel, Prediction};
use crate::records::CategoryScheme;

/// Census share (%) by label.
pub type CensusShares = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryShare {
    pub label: String,
    pub predicted_pct: f64,
    pub census_pct: f64,
    pub abs_error_pp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    /// Predictions seen, UNPARSEABLE included.
    pub n: usize,
    pub parseable: usize,
    /// Labels listed in the census, in scheme order.
    pub per_category: Vec<CategoryShare>,
    /// Mean absolute error over `per_category`, percentage points.
    pub avg_error_pp: f64,
    /// Predicted shares of labels the census does not list; not part of the
    /// error.
    pub uncompared: Vec<(String, f64)>,
}

fn compared_labels(census: &CensusShares, scheme: &CategoryScheme) -> Result<Vec<(usize, f64)>, MetricError> {
    let mut out = Vec::with_capacity(census.len());
    for (label, share) in census {
        let idx = scheme
            .index_of(label)
            .ok_or_else(|| MetricError::UnknownLabel(label.clone()))?;
        out.push((idx, *share));
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

fn build(
    predicted: &[f64],
    census: &CensusShares,
    scheme: &CategoryScheme,
    n: usize,
    parseable: usize,
) -> Result<AggregateReport, MetricError> {
    let compared = compared_labels(census, scheme)?;
    if compared.is_empty() {
        return Err(MetricError::Empty("census lists no categories".into()));
    }
    let per_category: Vec<CategoryShare> = compared
        .iter()
        .map(|&(i, census_pct)| CategoryShare {
            label: scheme.label(i).to_string(),
            predicted_pct: predicted[i],
            census_pct,
            abs_error_pp: (predicted[i] - census_pct).abs(),
        })
        .collect();
    let avg_error_pp =
        per_category.iter().map(|c| c.abs_error_pp).sum::<f64>() / per_category.len() as f64;
    let uncompared = (0..scheme.len())
        .filter(|i| predicted[*i] > 0.0 && !compared.iter().any(|(c, _)| c == i))
        .map(|i| (scheme.label(i).to_string(), predicted[i]))
        .collect();
    Ok(AggregateReport {
        n,
        parseable,
        per_category,
        avg_error_pp,
        uncompared,
    })
}

/// Compares predicted category shares against census shares.
pub fn aggregate_error(
    preds: &[Prediction],
    census: &CensusShares,
    scheme: &CategoryScheme,
) -> Result<AggregateReport, MetricError> {
    let mut counts = vec![0usize; scheme.len()];
    let mut parseable = 0;
    for p in preds {
        if let PredictedLabel::Category(c) = &p.label {
            let i = scheme
                .label_index(c)
                .ok_or_else(|| MetricError::UnknownLabel(c.clone()))?;
            counts[i] += 1;
            parseable += 1;
        }
    }
    if parseable == 0 {
        return Err(MetricError::Empty("no parseable predictions".into()));
    }
    let shares: Vec<f64> = counts
        .iter()
        .map(|c| 100.0 * *c as f64 / parseable as f64)
        .collect();
    build(&shares, census, scheme, preds.len(), parseable)
}

/// Same comparison from already-aggregated predicted shares (%). Labels
/// absent from `predicted` have share 0.
pub fn aggregate_from_shares(
    predicted: &BTreeMap<String, f64>,
    census: &CensusShares,
    scheme: &CategoryScheme,
) -> Result<AggregateReport, MetricError> {
    let mut shares = vec![0.0; scheme.len()];
    for (label, share) in predicted {
        let i = scheme
            .index_of(label)
            .ok_or_else(|| MetricError::UnknownLabel(label.clone()))?;
        shares[i] = *share;
    }
    build(&shares, census, scheme, 0, 0)
}

/// Best-of-models summary: the smallest per-category error across models and
/// the smallest average error. This reads a "minimum error" column as a
/// row-wise minimum over models.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateComparison {
    pub per_category: Vec<(String, f64, String)>,
    pub best_avg_error_pp: f64,
    pub best_model: String,
}

pub fn compare_models(reports: &[(String, AggregateReport)]) -> Result<AggregateComparison, MetricError> {
    let (first_model, first) = reports
        .first()
        .ok_or_else(|| MetricError::Empty("no model reports".into()))?;
    let per_category = first
        .per_category
        .iter()
        .enumerate()
        .map(|(row, cat)| {
            let mut best = (cat.abs_error_pp, first_model.clone());
            for (model, rep) in &reports[1..] {
                if let Some(c) = rep.per_category.get(row) {
                    if c.abs_error_pp < best.0 {
                        best = (c.abs_error_pp, model.clone());
                    }
                }
            }
            (cat.label.clone(), best.0, best.1)
        })
        .collect();
    let (best_model, best) = reports
        .iter()
        .map(|(m, r)| (m, r.avg_error_pp))
        .fold((first_model, f64::INFINITY), |acc, (m, e)| if e < acc.1 { (m, e) } else { acc });
    Ok(AggregateComparison {
        per_category,
        best_avg_error_pp: best,
        best_model: best_model.clone(),
    })
}

impl AggregateReport {
    pub fn render_text(&self) -> String {
        let mut rows = vec![vec![
            "category".to_string(),
            "predicted %".into(),
            "census %".into(),
            "abs err pp".into(),
        ]];
        for c in &self.per_category {
            rows.push(vec![
                c.label.clone(),
                format!("{:.1}", c.predicted_pct),
                format!("{:.1}", c.census_pct),
                format!("{:.1}", c.abs_error_pp),
            ]);
        }
        rows.push(vec![
            "avg. error".into(),
            String::new(),
            String::new(),
            format!("{:.1}", self.avg_error_pp),
        ]);
        let mut out = aligned(&rows);
        for (label, share) in &self.uncompared {
            out.push_str(&format!("not in census: {label} {share:.1}%\n"));
        }
        if self.n > 0 {
            out.push_str(&format!(
                "n = {}   parseable = {}\n",
                self.n, self.parseable
            ));
        }
        out
    }
}
