use serde::Serialize;

use crate::prediction::PredictedLabel;
use crate::records::CategoryScheme;

/// Which rung of the repair ladder produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairRule {
    /// The whole response is a label, ignoring case, whitespace and
    /// surrounding punctuation.
    Exact,
    /// The whole response is an alias.
    Alias,
    /// Exactly one label occurs as a whole word inside the response.
    UniqueMention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParseOutcome {
    pub label: Option<usize>,
    pub rule: Option<RepairRule>,
    /// Distinct labels mentioned when the response was ambiguous.
    pub mentioned: Vec<usize>,
}

fn strip_punct(s: &str) -> &str {
    s.trim_matches(|c: char| !c.is_alphanumeric())
}

fn fold(s: &str) -> String {
    strip_punct(s).to_lowercase()
}

fn mentions(haystack: &str, needle: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    if needle.is_empty() {
        return spans;
    }
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            spans.push((start, end));
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    spans
}

/// Maps a model response onto the scheme, trying in order: exact label,
/// alias, unique whole-word label mention. Never fails.
pub fn parse_response_detailed(text: &str, scheme: &CategoryScheme) -> ParseOutcome {
    let outcome = |label, rule| ParseOutcome {
        label: Some(label),
        rule: Some(rule),
        mentioned: Vec::new(),
    };
    let folded = fold(text);
    if let Some(i) = scheme.label_index(&folded).or_else(|| {
        scheme
            .labels()
            .iter()
            .position(|l| fold(l) == folded && !folded.is_empty())
    }) {
        return outcome(i, RepairRule::Exact);
    }
    if let Some(i) = scheme.alias_index(text.trim()).or_else(|| scheme.alias_index(&folded)) {
        return outcome(i, RepairRule::Alias);
    }

    let hay = text.to_lowercase();
    let mut spans: Vec<(usize, usize, usize)> = Vec::new();
    for (i, label) in scheme.labels().iter().enumerate() {
        for (s, e) in mentions(&hay, &fold(label)) {
            spans.push((i, s, e));
        }
    }
    // A mention nested inside a longer mention of another label
    // ("Asian" inside "South Asian") does not count on its own.
    let mut found: Vec<usize> = spans
        .iter()
        .filter(|(i, s, e)| {
            !spans
                .iter()
                .any(|(j, s2, e2)| j != i && s2 <= s && e <= e2 && (e2 - s2) > (e - s))
        })
        .map(|(i, _, _)| *i)
        .collect();
    found.sort_unstable();
    found.dedup();
    match found.as_slice() {
        [only] => outcome(*only, RepairRule::UniqueMention),
        _ => ParseOutcome {
            label: None,
            rule: None,
            mentioned: found,
        },
    }
}

pub fn parse_response(text: &str, scheme: &CategoryScheme) -> PredictedLabel {
    match parse_response_detailed(text, scheme).label {
        Some(i) => PredictedLabel::Category(scheme.label(i).to_string()),
        None => PredictedLabel::Unparseable,
    }
}
