//! Template realisation of concept sets into operator sentences.
//!
//! All wording lives in a JSON lexicon (see `lexicon/en.json`); this module
//! only fills slots. Other realisers can be plugged in through [`Realizer`].

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;

use crate::explainer::{ConceptSet, Condition, ConditionValue, Relation};
use crate::telemetry::{format_wall, BehaviourLabel, FeatureId, FeatureKind};

/// The lexicon shipped with the crate.
pub const DEFAULT_LEXICON: &str = include_str!("../lexicon/en.json");

#[derive(Debug, Error)]
pub enum VerbalizeError {
    #[error("lexicon JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("lexicon has no {section} entry for `{key}`")]
    Missing { section: &'static str, key: String },
    #[error("lexicon: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeMode {
    /// `HH:MM:SS` since mission start.
    #[default]
    Mission,
    /// ISO 8601 UTC wall clock.
    Wall,
}

impl std::str::FromStr for TimeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mission" => Ok(TimeMode::Mission),
            "wall" => Ok(TimeMode::Wall),
            other => Err(format!(
                "unknown time mode `{other}` (expected mission or wall)"
            )),
        }
    }
}

pub fn format_time(mission_seconds: f64, wall: &DateTime<Utc>, mode: TimeMode) -> String {
    match mode {
        TimeMode::Mission => {
            let total = mission_seconds.max(0.0).floor() as u64;
            format!(
                "{:02}:{:02}:{:02}",
                total / 3600,
                (total / 60) % 60,
                total % 60
            )
        }
        TimeMode::Wall => format_wall(wall),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureLexeme {
    /// Noun phrase for numeric and categorical features.
    pub phrase: Option<String>,
    /// Clauses for boolean features.
    #[serde(rename = "true")]
    pub when_true: Option<String>,
    #[serde(rename = "false")]
    pub when_false: Option<String>,
    /// Values above this encode "nothing detected".
    pub sentinel_above: Option<f64>,
    pub absent: Option<String>,
    pub present: Option<String>,
    /// Rendering of a missing category.
    pub none: Option<String>,
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub because: String,
    pub default: String,
    pub question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[serde(default = "default_agent")]
    agent: String,
    behaviours: HashMap<String, String>,
    features: HashMap<String, FeatureLexeme>,
    relations: HashMap<String, String>,
    templates: Templates,
    stale_marker: String,
}

fn default_agent() -> String {
    "the vehicle".into()
}

/// Validated, total lexicon.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub agent: String,
    behaviours: HashMap<BehaviourLabel, String>,
    features: HashMap<String, FeatureLexeme>,
    relations: HashMap<Relation, String>,
    pub templates: Templates,
    pub stale_marker: String,
}

impl Lexicon {
    pub fn english() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("shipped lexicon is total")
    }

    /// Parses and checks totality over every behaviour, feature and relation.
    pub fn from_json(text: &str) -> Result<Self, VerbalizeError> {
        let file: LexiconFile = serde_json::from_str(text)?;
        let mut behaviours = HashMap::new();
        for (k, v) in file.behaviours {
            let label = k
                .parse::<BehaviourLabel>()
                .map_err(|e| VerbalizeError::Invalid(e.to_string()))?;
            behaviours.insert(label, v);
        }
        for label in BehaviourLabel::ALL {
            if !behaviours.contains_key(&label) {
                return Err(VerbalizeError::Missing {
                    section: "behaviours",
                    key: label.to_string(),
                });
            }
        }
        for id in FeatureId::ALL {
            let Some(lex) = file.features.get(id.name()) else {
                return Err(VerbalizeError::Missing {
                    section: "features",
                    key: id.name().into(),
                });
            };
            let complete = match id.kind() {
                FeatureKind::Boolean => lex.when_true.is_some() && lex.when_false.is_some(),
                FeatureKind::Numeric | FeatureKind::Categorical => lex.phrase.is_some(),
            };
            if !complete {
                return Err(VerbalizeError::Invalid(format!(
                    "feature `{}` lacks the phrases its kind needs",
                    id.name()
                )));
            }
            if lex.sentinel_above.is_some() && (lex.absent.is_none() || lex.present.is_none()) {
                return Err(VerbalizeError::Invalid(format!(
                    "feature `{}` has sentinel_above without absent/present phrases",
                    id.name()
                )));
            }
        }
        if let Some(unknown) = file
            .features
            .keys()
            .find(|k| FeatureId::from_name(k).is_none())
        {
            return Err(VerbalizeError::Invalid(format!(
                "unknown feature `{unknown}`"
            )));
        }
        let mut relations = HashMap::new();
        for (k, v) in file.relations {
            let r = Relation::parse(&k)
                .ok_or_else(|| VerbalizeError::Invalid(format!("unknown relation `{k}`")))?;
            relations.insert(r, v);
        }
        for r in [Relation::Lt, Relation::Ge, Relation::Eq, Relation::Ne] {
            if !relations.contains_key(&r) {
                return Err(VerbalizeError::Missing {
                    section: "relations",
                    key: r.as_str().into(),
                });
            }
        }
        for (name, t, slot) in [
            ("because", &file.templates.because, "{conditions}"),
            ("default", &file.templates.default, "{behaviour}"),
        ] {
            if !t.contains(slot) || !t.contains("{time}") {
                return Err(VerbalizeError::Invalid(format!(
                    "template `{name}` must contain {{time}} and {slot}"
                )));
            }
        }
        if file.stale_marker.trim().is_empty() {
            return Err(VerbalizeError::Invalid("stale_marker is empty".into()));
        }
        Ok(Self {
            agent: file.agent,
            behaviours,
            features: file.features,
            relations,
            templates: file.templates,
            stale_marker: file.stale_marker,
        })
    }

    pub fn behaviour(&self, label: BehaviourLabel) -> &str {
        &self.behaviours[&label]
    }

    pub fn feature(&self, name: &str) -> Result<&FeatureLexeme, VerbalizeError> {
        self.features
            .get(name)
            .ok_or_else(|| VerbalizeError::Missing {
                section: "features",
                key: name.into(),
            })
    }

    pub fn relation(&self, r: Relation) -> &str {
        &self.relations[&r]
    }
}

/// Shortest decimal that round-trips, without exponent.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

fn with_unit(value: String, unit: &str) -> String {
    if unit.is_empty() {
        value
    } else {
        format!("{value} {unit}")
    }
}

/// `<feature phrase> <relation phrase> <value with unit>`, plus the stale
/// marker when the condition rests on an outdated value.
pub fn realize_condition(c: &Condition, lex: &Lexicon) -> Result<String, VerbalizeError> {
    let entry = lex.feature(&c.feature)?;
    let missing = |what: &str| {
        VerbalizeError::Invalid(format!("feature `{}` has no {what} phrase", c.feature))
    };
    let mut text = match &c.value {
        ConditionValue::Flag(b) => {
            let truth = match c.relation {
                Relation::Ne => !*b,
                _ => *b,
            };
            let phrase = if truth {
                &entry.when_true
            } else {
                &entry.when_false
            };
            phrase.clone().ok_or_else(|| missing("boolean"))?
        }
        ConditionValue::Number(v) => {
            let sentinel = entry.sentinel_above.filter(|s| v > s);
            match (sentinel, c.relation) {
                (Some(_), Relation::Ge) => entry.absent.clone().ok_or_else(|| missing("absent"))?,
                (Some(_), Relation::Lt) => {
                    entry.present.clone().ok_or_else(|| missing("present"))?
                }
                _ => {
                    let phrase = entry.phrase.as_deref().ok_or_else(|| missing("noun"))?;
                    format!(
                        "{phrase} {} {}",
                        lex.relation(c.relation),
                        with_unit(format_number(*v), &c.unit)
                    )
                }
            }
        }
        ConditionValue::Category(cat) => {
            let phrase = entry.phrase.as_deref().ok_or_else(|| missing("noun"))?;
            let value = match cat {
                Some(s) => s.clone(),
                None => entry.none.clone().unwrap_or_else(|| "none".into()),
            };
            format!("{phrase} {} {}", lex.relation(c.relation), value)
        }
    };
    if c.stale {
        text.push(' ');
        text.push_str(&lex.stale_marker);
    }
    Ok(text)
}

/// `a`, `a and b`, `a, b and c`.
pub fn join_phrases(parts: &[String]) -> String {
    match parts {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Provenance of a sentence slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub slots: Vec<Slot>,
}

/// Anything that can turn a concept set into a sentence.
pub trait Realizer {
    fn realize(&self, cs: &ConceptSet) -> Result<Sentence, VerbalizeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Style {
    #[default]
    Declarative,
    /// Uses the lexicon's `question` template and per-feature questions.
    Interrogative,
}

#[derive(Debug, Clone)]
pub struct TemplateRealizer {
    pub lexicon: Lexicon,
    pub time_mode: TimeMode,
    pub style: Style,
}

impl TemplateRealizer {
    pub fn new(lexicon: Lexicon, time_mode: TimeMode) -> Self {
        Self {
            lexicon,
            time_mode,
            style: Style::Declarative,
        }
    }

    pub fn with_style(mut self, style: Style) -> Self {
        self.style = style;
        self
    }
}

impl Default for TemplateRealizer {
    fn default() -> Self {
        Self::new(Lexicon::english(), TimeMode::Mission)
    }
}

pub fn realize(
    cs: &ConceptSet,
    lex: &Lexicon,
    time_mode: TimeMode,
) -> Result<Sentence, VerbalizeError> {
    render(cs, lex, time_mode, Style::Declarative)
}

impl Realizer for TemplateRealizer {
    fn realize(&self, cs: &ConceptSet) -> Result<Sentence, VerbalizeError> {
        render(cs, &self.lexicon, self.time_mode, self.style)
    }
}

fn render(
    cs: &ConceptSet,
    lex: &Lexicon,
    mode: TimeMode,
    style: Style,
) -> Result<Sentence, VerbalizeError> {
    let time = format_time(cs.time.seconds, &cs.time.wall, mode);
    let behaviour = lex.behaviour(cs.behaviour);
    let mut slots = vec![
        Slot {
            name: "time".into(),
            source: "time".into(),
        },
        Slot {
            name: "behaviour".into(),
            source: "behaviour".into(),
        },
    ];
    let phrases = cs
        .causality
        .iter()
        .map(|c| realize_condition(c, lex))
        .collect::<Result<Vec<_>, _>>()?;
    slots.extend((0..phrases.len()).map(|i| Slot {
        name: format!("condition{i}"),
        source: format!("causality[{i}]"),
    }));

    let template = if phrases.is_empty() {
        lex.templates.default.clone()
    } else {
        match (style, &lex.templates.question) {
            (Style::Interrogative, Some(q)) => {
                let questions: Vec<String> = cs
                    .causality
                    .iter()
                    .zip(&phrases)
                    .map(|(c, p)| {
                        let answer = capitalize(p);
                        match lex
                            .feature(&c.feature)
                            .ok()
                            .and_then(|e| e.question.as_deref())
                        {
                            Some(question) => format!("{question} {answer}."),
                            None => format!("{answer}."),
                        }
                    })
                    .collect();
                q.replace("{questions}", &questions.join(" "))
            }
            _ => lex
                .templates
                .because
                .replace("{conditions}", &join_phrases(&phrases)),
        }
    };
    let text = template
        .replace("{time}", &time)
        .replace("{agent}", &lex.agent)
        .replace("{behaviour}", behaviour);
    Ok(Sentence { text, slots })
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
