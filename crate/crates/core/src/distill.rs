//! Teacher-labelled training data for student models, and scoring of the
//! student predictions that come back.
//!
//! Files are JSON-lines. Train/test rows:
//! `{"id", "name", "geography": {level: value}, "label", "truth"?}` where
//! `label` is the teacher's label and `truth` appears on test rows whose
//! record has one. Student prediction rows: `{"id", "label"}`.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::llm::parse_response;
use crate::metrics::{evaluate, ConfusionMatrix, MetricError};
use crate::prediction::{read_json_lines, PredictedLabel, Prediction, PredictionIoError};
use crate::records::{CategoryScheme, RecordSet};
use crate::rng::SampleRng;

pub const MIN_USABLE: usize = 10;
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum DistillError {
    #[error("only {0} usable teacher-labelled records; at least {MIN_USABLE} needed")]
    TooFew(usize),
    #[error("train fraction must be strictly between 0 and 1, got {0}")]
    Fraction(f64),
    #[error("teacher label {0:?} is not in the scheme")]
    UnknownLabel(String),
    #[error("no prediction for test record {0:?}")]
    Align(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Read(#[from] PredictionIoError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRow {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub geography: BTreeMap<String, String>,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillSplit {
    pub train: Vec<DistillRow>,
    pub test: Vec<DistillRow>,
    pub seed: u64,
    pub fraction: f64,
    /// Records without a usable teacher label.
    pub excluded: usize,
}

/// Splits teacher-labelled records into train and test sets.
///
/// Records whose teacher label is missing or UNPARSEABLE are excluded. The
/// split is a seeded uniform shuffle with `round(fraction * n)` training
/// records; with `stratify` each teacher label is split separately, quotas
/// allocated by largest remainder so the total is unchanged. Both parts keep
/// input record order.
pub fn split_teacher_set(
    records: &RecordSet,
    teacher: &[Prediction],
    fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<DistillSplit, DistillError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DistillError::Fraction(fraction));
    }
    let scheme = records.scheme();
    let labels: HashMap<&str, &PredictedLabel> =
        teacher.iter().map(|p| (p.id.as_str(), &p.label)).collect();

    // (record index, teacher label index)
    let mut usable = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(PredictedLabel::Category(c)) = labels.get(r.id.as_str()) {
            let l = scheme
                .label_index(c)
                .ok_or_else(|| DistillError::UnknownLabel(c.clone()))?;
            usable.push((i, l));
        }
    }
    let excluded = records.len() - usable.len();
    let n = usable.len();
    if n < MIN_USABLE {
        return Err(DistillError::TooFew(n));
    }
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut rng = SampleRng::new(seed);
    let mut in_train = vec![false; records.len()];
    if stratify {
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); scheme.len()];
        for &(i, l) in &usable {
            groups[l].push(i);
        }
        let exact: Vec<f64> = groups.iter().map(|g| fraction * g.len() as f64).collect();
        let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by(|a, b| {
            let ra = exact[*a] - exact[*a].floor();
            let rb = exact[*b] - exact[*b].floor();
            rb.total_cmp(&ra).then(a.cmp(b))
        });
        let mut remaining = n_train - quota.iter().sum::<usize>();
        for k in order {
            if remaining == 0 {
                break;
            }
            if quota[k] < groups[k].len() {
                quota[k] += 1;
                remaining -= 1;
            }
        }
        for (g, q) in groups.iter_mut().zip(quota) {
            for &i in rng.partial_shuffle(g, q).iter() {
                in_train[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = usable.iter().map(|(i, _)| *i).collect();
        for &i in rng.partial_shuffle(&mut idx, n_train).iter() {
            in_train[i] = true;
        }
    }

    let mut train = Vec::with_capacity(n_train);
    let mut test = Vec::with_capacity(n - n_train);
    for (i, l) in usable {
        let r = &records.records()[i];
        let row = DistillRow {
            id: r.id.clone(),
            name: r.display_name(),
            geography: r.geography.clone(),
            label: scheme.label(l).to_string(),
            truth: None,
        };
        if in_train[i] {
            train.push(row);
        } else {
            test.push(DistillRow {
                truth: r.truth_label.clone(),
                ..row
            });
        }
    }
    Ok(DistillSplit {
        train,
        test,
        seed,
        fraction,
        excluded,
    })
}

fn write_rows(path: &Path, rows: &[DistillRow]) -> Result<(), DistillError> {
    let err = |source| DistillError::Write {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| err(e.into()))?;
        w.write_all(b"\n").map_err(err)?;
    }
    w.flush().map_err(err)
}

impl DistillSplit {
    /// Writes `train.jsonl` and `test.jsonl` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf), DistillError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| DistillError::Write {
            path: dir.display().to_string(),
            source,
        })?;
        let (train, test) = (dir.join(TRAIN_FILE), dir.join(TEST_FILE));
        write_rows(&train, &self.train)?;
        write_rows(&test, &self.test)?;
        Ok((train, test))
    }
}

/// [`split_teacher_set`] followed by [`DistillSplit::write`].
pub fn export_teacher_set(
    records: &RecordSet,
    teacher: &[Prediction],
    fraction: f64,
    seed: u64,
    stratify: bool,
    out_dir: impl AsRef<Path>,
) -> Result<(DistillSplit, PathBuf, PathBuf), DistillError> {
    let split = split_teacher_set(records, teacher, fraction, seed, stratify)?;
    let (train, test) = split.write(out_dir)?;
    Ok((split, train, test))
}

pub fn read_split_file(path: impl AsRef<Path>) -> Result<Vec<DistillRow>, DistillError> {
    Ok(read_json_lines(path)?)
}

pub fn read_label_file(path: impl AsRef<Path>) -> Result<Vec<LabelRow>, DistillError> {
    Ok(read_json_lines(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistillReport {
    /// Test records with a truth label.
    pub n: u64,
    pub teacher_accuracy: f64,
    pub base_accuracy: f64,
    pub finetuned_accuracy: f64,
    /// `100 * (finetuned - teacher)`.
    pub gap_pp: f64,
    /// Share of test records where the fine-tuned student matches the teacher.
    pub agreement: f64,
}

impl DistillReport {
    pub fn render_text(&self) -> String {
        format!(
            "n = {}\nteacher     {:>6.1}%\nbase        {:>6.1}%\nfine-tuned  {:>6.1}%\ngap         {:>+6.1}pp\nagreement   {:>6.1}%\n",
            self.n,
            100.0 * self.teacher_accuracy,
            100.0 * self.base_accuracy,
            100.0 * self.finetuned_accuracy,
            self.gap_pp,
            100.0 * self.agreement
        )
    }
}

fn resolve(label: &str, scheme: &CategoryScheme) -> Option<usize> {
    match parse_response(label, scheme) {
        PredictedLabel::Category(c) => scheme.label_index(&c),
        PredictedLabel::Unparseable => None,
    }
}

/// Scores base and fine-tuned student predictions against test truth, with
/// the test rows' teacher labels as the reference model.
pub fn evaluate_student(
    test: &[DistillRow],
    base: &[LabelRow],
    finetuned: &[LabelRow],
    scheme: &CategoryScheme,
) -> Result<DistillReport, DistillError> {
    let index = |rows: &[LabelRow]| -> HashMap<String, String> {
        rows.iter().map(|r| (r.id.clone(), r.label.clone())).collect()
    };
    let (base, finetuned) = (index(base), index(finetuned));

    let mut teacher_m = ConfusionMatrix::zeros(scheme);
    let mut base_m = ConfusionMatrix::zeros(scheme);
    let mut ft_m = ConfusionMatrix::zeros(scheme);
    let mut agree = 0usize;
    for row in test {
        let b = base.get(&row.id).ok_or_else(|| DistillError::Align(row.id.clone()))?;
        let f = finetuned
            .get(&row.id)
            .ok_or_else(|| DistillError::Align(row.id.clone()))?;
        let teacher = scheme
            .label_index(&row.label)
            .ok_or_else(|| DistillError::UnknownLabel(row.label.clone()))?;
        let ft = resolve(f, scheme);
        if ft == Some(teacher) {
            agree += 1;
        }
        let Some(truth) = row.truth.as_deref() else {
            continue;
        };
        let t = scheme
            .label_index(truth)
            .ok_or_else(|| DistillError::UnknownLabel(truth.to_string()))?;
        teacher_m.record(t, Some(teacher));
        base_m.record(t, resolve(b, scheme));
        ft_m.record(t, ft);
    }
    let teacher = evaluate(&teacher_m)?;
    let base = evaluate(&base_m)?;
    let ft = evaluate(&ft_m)?;
    Ok(DistillReport {
        n: teacher.n,
        teacher_accuracy: teacher.accuracy,
        base_accuracy: base.accuracy,
        finetuned_accuracy: ft.accuracy,
        gap_pp: 100.0 * (ft.accuracy - teacher.accuracy),
        agreement: agree as f64 / test.len() as f64,
    })
}
