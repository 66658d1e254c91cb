//! Prompt templates and rendering.
//!
//! A template is a list of segments, one per non-empty line of the template
//! file. A segment is rendered only when every placeholder it mentions is
//! enabled for the run; rendered segments are joined with single spaces.
//! Placeholders: `{name}`, `{location}`, `{categories}`, `{age}`, `{party}`,
//! `{gender}`, `{zip}`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::records::{CategoryScheme, NameRecord};

pub const BASELINE_TEMPLATE_ID: &str = "baseline";

const BASELINE_TEMPLATE: &str = "\
Classify the race/ethnicity of this person based on their name and location.
Name: {name}.
Location: {location}.
Age: {age}.
Gender: {gender}.
Party registration: {party}.
Zip code: {zip}.
Return only one of: {categories}.
";

const PLACEHOLDERS: [&str; 7] = ["name", "location", "categories", "age", "party", "gender", "zip"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Age,
    Party,
    Zip,
    Gender,
}

impl Feature {
    pub const ALL: [Feature; 4] = [Feature::Age, Feature::Party, Feature::Zip, Feature::Gender];

    fn placeholder(self) -> &'static str {
        match self {
            Feature::Age => "age",
            Feature::Party => "party",
            Feature::Zip => "zip",
            Feature::Gender => "gender",
        }
    }

    /// Parses a comma-separated list; `all` expands to every feature.
    pub fn parse_list(s: &str) -> Result<BTreeSet<Feature>, String> {
        let mut out = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if part.eq_ignore_ascii_case("all") {
                out.extend(Feature::ALL);
            } else {
                out.insert(part.parse()?);
            }
        }
        Ok(out)
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "age" => Ok(Feature::Age),
            "party" => Ok(Feature::Party),
            "zip" => Ok(Feature::Zip),
            "gender" => Ok(Feature::Gender),
            other => Err(format!("unknown feature {other:?} (age, party, zip, gender, all)")),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.placeholder())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NameMode {
    #[default]
    Full,
    SurnameOnly,
}

#[derive(Debug, Clone)]
pub struct PromptConfig {
    pub name_mode: NameMode,
    pub include_geo: bool,
    /// Geography level rendered first in the location.
    pub geo_level: String,
    /// Enclosing levels appended after `geo_level`, comma-separated
    /// ("Miami-Dade County, Florida"). Missing values are skipped.
    pub geo_context: Vec<String>,
    pub extra_features: BTreeSet<Feature>,
    pub template_id: String,
    pub scheme: Arc<CategoryScheme>,
}

impl PromptConfig {
    pub fn new(scheme: Arc<CategoryScheme>, geo_level: impl Into<String>) -> Self {
        Self {
            name_mode: NameMode::Full,
            include_geo: true,
            geo_level: geo_level.into(),
            geo_context: Vec::new(),
            extra_features: BTreeSet::new(),
            template_id: BASELINE_TEMPLATE_ID.to_string(),
            scheme,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {id:?} uses unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder { id: String, placeholder: String },
    #[error("template {id:?} has an unterminated placeholder")]
    Unterminated { id: String },
    #[error("template {0:?} has no {{name}} or no {{categories}} placeholder")]
    MissingCore(String),
    #[error("cannot read templates from {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("record {id:?} lacks {field}, required by the prompt configuration")]
    MissingField { id: String, field: String },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} has no {{{placeholder}}} segment for an enabled input")]
    TemplateLacksPlaceholder { template: String, placeholder: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: String,
    /// Segment text with the placeholders it mentions.
    segments: Vec<(String, BTreeSet<&'static str>)>,
}

impl Template {
    pub fn parse(id: impl Into<String>, text: &str) -> Result<Self, TemplateError> {
        let id = id.into();
        let mut segments = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut used = BTreeSet::new();
            let mut rest = line;
            while let Some(open) = rest.find('{') {
                let close = rest[open..]
                    .find('}')
                    .ok_or_else(|| TemplateError::Unterminated { id: id.clone() })?;
                let name = &rest[open + 1..open + close];
                let known = PLACEHOLDERS
                    .iter()
                    .find(|p| **p == name)
                    .ok_or_else(|| TemplateError::UnknownPlaceholder {
                        id: id.clone(),
                        placeholder: name.to_string(),
                    })?;
                used.insert(*known);
                rest = &rest[open + close + 1..];
            }
            segments.push((line.to_string(), used));
        }
        let t = Self { id, segments };
        if !t.mentions("name") || !t.mentions("categories") {
            return Err(TemplateError::MissingCore(t.id));
        }
        Ok(t)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn mentions(&self, placeholder: &str) -> bool {
        self.segments.iter().any(|(_, used)| used.contains(placeholder))
    }
}

/// Templates by id. Always contains the baseline template.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, Template>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateRegistry {
    pub fn builtin() -> Self {
        let baseline = Template::parse(BASELINE_TEMPLATE_ID, BASELINE_TEMPLATE).expect("baseline template parses");
        Self {
            templates: BTreeMap::from([(BASELINE_TEMPLATE_ID.to_string(), baseline)]),
        }
    }

    /// Adds every `<id>.txt` file in `dir` to the built-in registry; a file
    /// named `baseline.txt` replaces the built-in baseline.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let io = |e: std::io::Error| TemplateError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut reg = Self::builtin();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        for path in paths {
            let id = path.file_stem().unwrap().to_string_lossy().to_string();
            let text = std::fs::read_to_string(&path).map_err(io)?;
            reg.insert(Template::parse(id, &text)?);
        }
        Ok(reg)
    }

    pub fn insert(&mut self, template: Template) {
        self.templates.insert(template.id.clone(), template);
    }

    pub fn get(&self, id: &str) -> Option<&Template> {
        self.templates.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

fn missing(record: &NameRecord, field: impl Into<String>) -> PromptError {
    PromptError::MissingField {
        id: record.id.clone(),
        field: field.into(),
    }
}

/// Renders the prompt for one record. Output is a single line with no
/// trailing whitespace.
pub fn build_prompt(
    record: &NameRecord,
    cfg: &PromptConfig,
    registry: &TemplateRegistry,
) -> Result<String, PromptError> {
    let template = registry
        .get(&cfg.template_id)
        .ok_or_else(|| PromptError::UnknownTemplate(cfg.template_id.clone()))?;

    let mut values: BTreeMap<&'static str, String> = BTreeMap::new();
    values.insert(
        "name",
        match cfg.name_mode {
            NameMode::Full => record.display_name(),
            NameMode::SurnameOnly => record.surname.split_whitespace().collect::<Vec<_>>().join(" "),
        },
    );
    values.insert("categories", cfg.scheme.labels().join(", "));
    if cfg.include_geo {
        let primary = record
            .geo(&cfg.geo_level)
            .ok_or_else(|| missing(record, format!("geography.{}", cfg.geo_level)))?;
        let mut parts = vec![primary];
        parts.extend(cfg.geo_context.iter().filter_map(|l| record.geo(l)));
        values.insert("location", parts.join(", "));
    }
    for feature in &cfg.extra_features {
        let value = match feature {
            Feature::Age => record.age.map(|a| a.to_string()),
            Feature::Party => record.party.clone(),
            Feature::Gender => record.gender.clone(),
            Feature::Zip => record.geo("zip").map(str::to_string),
        }
        .ok_or_else(|| missing(record, feature.to_string()))?;
        values.insert(feature.placeholder(), value);
    }
    for enabled in values.keys() {
        if !template.mentions(enabled) {
            return Err(PromptError::TemplateLacksPlaceholder {
                template: template.id.clone(),
                placeholder: enabled.to_string(),
            });
        }
    }

    let mut rendered = Vec::new();
    for (text, used) in &template.segments {
        if !used.iter().all(|p| values.contains_key(p)) {
            continue;
        }
        let mut line = text.clone();
        for p in used {
            line = line.replace(&format!("{{{p}}}"), &values[p]);
        }
        rendered.push(line);
    }
    Ok(rendered.join(" "))
}
