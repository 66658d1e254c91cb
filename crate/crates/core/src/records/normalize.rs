use deunicode::deunicode;

/// What a normalized name is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamePurpose {
    /// Prompt text: whitespace cleanup only, case and diacritics kept.
    Display,
    /// Table join key, following Census surname-file conventions.
    Lookup,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("name {0:?} is empty after normalization")]
pub struct NormalizeError(pub String);

const GENERATIONAL_SUFFIXES: [&str; 5] = ["JR", "SR", "II", "III", "IV"];

/// Normalizes a raw name.
///
/// `Lookup` output is upper-case ASCII with apostrophes, periods and commas
/// removed and trailing generational suffixes dropped; it is idempotent.
pub fn normalize_name(raw: &str, purpose: NamePurpose) -> Result<String, NormalizeError> {
    let out = match purpose {
        NamePurpose::Display => raw.split_whitespace().collect::<Vec<_>>().join(" "),
        NamePurpose::Lookup => lookup_key(raw),
    };
    if out.is_empty() {
        Err(NormalizeError(raw.to_string()))
    } else {
        Ok(out)
    }
}

fn lookup_key(raw: &str) -> String {
    let ascii = deunicode(raw);
    let cleaned: String = ascii
        .chars()
        .filter(|c| !matches!(c, '\'' | '.' | ',' | '`'))
        .map(|c| c.to_ascii_uppercase())
        .collect();
    let mut tokens: Vec<&str> = cleaned.split_whitespace().collect();
    while tokens.len() > 1 && GENERATIONAL_SUFFIXES.contains(tokens.last().unwrap()) {
        tokens.pop();
    }
    tokens.join(" ")
}
