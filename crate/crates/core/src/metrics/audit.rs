use std::collections::HashMap;

use serde::Serialize;

use super::{aligned, ols_slope, MetricError, OlsResult};
use crate::prediction::{PredictedLabel, Prediction};
use crate::records::RecordSet;

pub const VENTILES: usize = 20;
const INCOME_UNIT: f64 = 10_000.0;
const MIN_OLS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VentileBin {
    /// 1-based.
    pub bin: usize,
    pub income_lo: f64,
    pub income_hi: f64,
    pub rate: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RaceAudit {
    pub race: String,
    pub n: usize,
    pub misclassification_rate: f64,
    pub ventiles: Vec<VentileBin>,
    /// Misclassified indicator on income in $10,000 units.
    pub ols: Option<OlsResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasAuditReport {
    pub engine: String,
    pub races: Vec<RaceAudit>,
    /// Predictions skipped because their record has no income or no truth.
    pub skipped: usize,
    pub notes: Vec<String>,
}

/// Misclassification rate by income ventile, and its OLS slope on income,
/// separately for every truth category.
///
/// Within a category, records are ordered by income with ties broken by
/// record id, then cut into 20 equal-frequency bins whose sizes differ by at
/// most one. Categories with fewer than 20 usable records are left out with
/// a note.
pub fn income_bias_audit(
    preds: &[Prediction],
    truths: &RecordSet,
    engine: &str,
) -> Result<BiasAuditReport, MetricError> {
    let scheme = truths.scheme();
    let by_id: HashMap<&str, usize> = truths
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();

    // (income, id, misclassified) per truth index
    let mut groups: Vec<Vec<(f64, &str, f64)>> = vec![Vec::new(); scheme.len()];
    let mut skipped = 0;
    for p in preds {
        let rec = &truths.records()[*by_id
            .get(p.id.as_str())
            .ok_or_else(|| MetricError::Align(p.id.clone()))?];
        let (Some(income), Some(truth)) = (rec.income, rec.truth_label.as_deref()) else {
            skipped += 1;
            continue;
        };
        let t = scheme
            .label_index(truth)
            .ok_or_else(|| MetricError::UnknownLabel(truth.to_string()))?;
        let wrong = match &p.label {
            PredictedLabel::Category(c) => c != truth,
            PredictedLabel::Unparseable => true,
        };
        groups[t].push((income, rec.id.as_str(), if wrong { 1.0 } else { 0.0 }));
    }

    let incomes: Vec<f64> = groups.iter().flatten().map(|g| g.0).collect();
    if incomes.is_empty() {
        return Err(MetricError::Empty("no predictions with income and truth".into()));
    }
    if incomes.iter().all(|x| *x == incomes[0]) {
        return Err(MetricError::ZeroVariance);
    }

    let mut races = Vec::new();
    let mut notes = Vec::new();
    for (t, mut group) in groups.into_iter().enumerate() {
        let race = scheme.label(t).to_string();
        let n = group.len();
        if n < VENTILES {
            if n > 0 {
                notes.push(format!("{race}: {n} records, fewer than {VENTILES}; omitted"));
            }
            continue;
        }
        group.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));

        let ventiles = (0..VENTILES)
            .map(|b| {
                let bin = &group[b * n / VENTILES..(b + 1) * n / VENTILES];
                VentileBin {
                    bin: b + 1,
                    income_lo: bin[0].0,
                    income_hi: bin[bin.len() - 1].0,
                    rate: bin.iter().map(|g| g.2).sum::<f64>() / bin.len() as f64,
                    n: bin.len(),
                }
            })
            .collect();

        let x: Vec<f64> = group.iter().map(|g| g.0 / INCOME_UNIT).collect();
        let y: Vec<f64> = group.iter().map(|g| g.2).collect();
        let ols = match ols_slope(&x, &y) {
            Ok(r) => Some(r),
            Err(MetricError::ZeroVariance) => {
                notes.push(format!("{race}: all incomes equal; no regression"));
                None
            }
            Err(e) => return Err(e),
        };
        debug_assert!(n >= MIN_OLS);
        races.push(RaceAudit {
            race,
            n,
            misclassification_rate: y.iter().sum::<f64>() / n as f64,
            ventiles,
            ols,
        });
    }

    Ok(BiasAuditReport {
        engine: engine.to_string(),
        races,
        skipped,
        notes,
    })
}

impl BiasAuditReport {
    pub fn render_text(&self) -> String {
        let mut rows = vec![vec![
            "race".to_string(),
            "n".into(),
            "miscl. %".into(),
            "slope/$10k".into(),
            "se".into(),
            "t".into(),
            "p".into(),
        ]];
        for r in &self.races {
            let mut row = vec![
                r.race.clone(),
                r.n.to_string(),
                format!("{:.1}", 100.0 * r.misclassification_rate),
            ];
            match &r.ols {
                Some(o) => row.extend([
                    format!("{:.4}", o.slope),
                    format!("{:.4}", o.se),
                    format!("{:.2}", o.t),
                    format!("{:.3e}", o.p),
                ]),
                None => row.extend(["-".to_string(), "-".into(), "-".into(), "-".into()]),
            }
            rows.push(row);
        }
        let mut out = format!("income bias audit: {}\n{}", self.engine, aligned(&rows));
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }

    /// `race,bin,lo,hi,rate,n` rows for plotting.
    pub fn ventile_csv(&self) -> String {
        let mut out = String::from("race,bin,lo,hi,rate,n\n");
        for r in &self.races {
            for v in &r.ventiles {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    csv_field(&r.race),
                    v.bin,
                    v.income_lo,
                    v.income_hi,
                    v.rate,
                    v.n
                ));
            }
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
