//! Confusion matrices, accuracy and recall, aggregate census comparison and
//! the income-bias audit.
//!
//! UNPARSEABLE predictions are scored as wrong: they count in every
//! denominator and in no numerator.

mod aggregate;
mod audit;
mod confusion;
mod ols;

pub use aggregate::{
    aggregate_error, aggregate_from_shares, compare_models, AggregateComparison, AggregateReport,
    CategoryShare, CensusShares,
};
pub use audit::{income_bias_audit, BiasAuditReport, RaceAudit, VentileBin, VENTILES};
pub use confusion::{confusion_matrix, evaluate, macro_average, ConfusionMatrix, EvalReport};
pub use ols::{ols_slope, OlsResult};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("prediction for {0:?} has no matching record")]
    Align(String),
    #[error("record {0:?} has no truth label")]
    MissingTruth(String),
    #[error("two predictions for record {0:?}")]
    DuplicatePrediction(String),
    #[error("label {0:?} is not in the scheme")]
    UnknownLabel(String),
    #[error("nothing to evaluate: {0}")]
    Empty(String),
    #[error("zero variance in the regressor")]
    ZeroVariance,
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
}

/// Formats rows as space-aligned columns, first column left-aligned and
/// the rest right-aligned.
pub(crate) fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c == 0 {
                line.push_str(&format!("{:<w$}", cell, w = widths[0]));
            } else {
                line.push_str(&format!("  {:>w$}", cell, w = widths[c]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub(crate) fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}
