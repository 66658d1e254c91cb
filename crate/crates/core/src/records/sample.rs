use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::{NameRecord, RecordSet};
use crate::rng::SampleRng;

/// Record field that defines strata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StratumField {
    Truth,
    Gender,
    Party,
    Geography(String),
}

impl FromStr for StratumField {
    type Err = std::convert::Infallible;

    /// `truth`, `gender`, `party`; anything else (optionally prefixed
    /// `geo:`) names a geography level.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "truth" | "truth_label" => StratumField::Truth,
            "gender" => StratumField::Gender,
            "party" => StratumField::Party,
            other => StratumField::Geography(other.strip_prefix("geo:").unwrap_or(other).to_string()),
        })
    }
}

impl fmt::Display for StratumField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StratumField::Truth => f.write_str("truth"),
            StratumField::Gender => f.write_str("gender"),
            StratumField::Party => f.write_str("party"),
            StratumField::Geography(level) => write!(f, "geo:{level}"),
        }
    }
}

impl StratumField {
    fn value<'r>(&self, r: &'r NameRecord) -> Option<&'r str> {
        match self {
            StratumField::Truth => r.truth_label.as_deref(),
            StratumField::Gender => r.gender.as_deref(),
            StratumField::Party => r.party.as_deref(),
            StratumField::Geography(level) => r.geo(level),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SampleError {
    #[error("record {id:?} has no value for stratum field {field}")]
    MissingStratum { id: String, field: String },
    #[error("stratum {stratum:?} has {size} records, fewer than the {requested} requested")]
    Underfull {
        stratum: String,
        size: usize,
        requested: usize,
    },
}

/// Draws exactly `n_per_stratum` records from every stratum without
/// replacement.
///
/// Strata come out in scheme order when stratifying by truth label and in
/// lexicographic order otherwise; within a stratum records appear in draw
/// order. One [`SampleRng`] seeded with `seed` serves all strata in that
/// order, each stratum's candidates listed in input order.
pub fn stratified_sample(
    set: &RecordSet,
    field: &StratumField,
    n_per_stratum: usize,
    seed: u64,
) -> Result<RecordSet, SampleError> {
    let mut strata: BTreeMap<(usize, &str), Vec<usize>> = BTreeMap::new();
    for (i, r) in set.iter().enumerate() {
        let value = field.value(r).ok_or_else(|| SampleError::MissingStratum {
            id: r.id.clone(),
            field: field.to_string(),
        })?;
        let rank = match field {
            StratumField::Truth => set.scheme().label_index(value).unwrap_or(usize::MAX),
            _ => 0,
        };
        strata.entry((rank, value)).or_default().push(i);
    }

    let mut picked = Vec::with_capacity(strata.len() * n_per_stratum);
    if n_per_stratum > 0 {
        for ((_, stratum), members) in &strata {
            if members.len() < n_per_stratum {
                return Err(SampleError::Underfull {
                    stratum: stratum.to_string(),
                    size: members.len(),
                    requested: n_per_stratum,
                });
            }
        }
        let mut rng = SampleRng::new(seed);
        for mut members in strata.into_values() {
            picked.extend(
                rng.partial_shuffle(&mut members, n_per_stratum)
                    .iter()
                    .map(|&i| set.records()[i].clone()),
            );
        }
    }

    Ok(RecordSet::new(
        picked,
        set.scheme().clone(),
        format!("{} | stratified by {field}, n={n_per_stratum}, seed={seed}", set.source()),
    )
    .expect("subset of a valid record set is valid"))
}
