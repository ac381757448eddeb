//! Tree traversal, path simplification and concept-set extraction.
//!
//! The explainer treats the distilled tree as its model of the autonomy:
//! transitions are detected on the tree's predictions, never on labels.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distiller::{DecisionTree, DistillError, SplitCondition};
use crate::telemetry::{
    format_wall, BehaviourLabel, FeatureKind, FeatureSchema, FeatureValue, FeatureVector,
    TraceError, VehicleState,
};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Tree(#[from] DistillError),
    #[error("inconsistent path on feature `{feature}`: {detail}")]
    Inconsistent { feature: String, detail: String },
    #[error("timestamp regression: t={t} follows t={previous}")]
    TimestampRegression { previous: f64, t: f64 },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub node: usize,
    pub condition: SplitCondition,
    pub branch: Branch,
}

/// Root-to-leaf walk of one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalPath {
    pub steps: Vec<PathStep>,
    pub leaf: usize,
    pub label: BehaviourLabel,
    pub confidence: f64,
}

impl TraversalPath {
    /// Whether `fv` satisfies every recorded branch decision.
    pub fn accepts(&self, fv: &FeatureVector) -> bool {
        self.steps
            .iter()
            .all(|s| s.condition.goes_left(fv) == (s.branch == Branch::Left))
    }
}

pub fn traverse(tree: &DecisionTree, fv: &FeatureVector) -> Result<TraversalPath, ExplainError> {
    tree.check_schema(fv)?;
    let mut steps = Vec::new();
    let leaf = tree.descend(fv, |node, condition, left| {
        steps.push(PathStep {
            node,
            condition: condition.clone(),
            branch: if left { Branch::Left } else { Branch::Right },
        })
    });
    let p = tree.leaf_prediction(leaf);
    Ok(TraversalPath {
        steps,
        leaf,
        label: p.label,
        confidence: p.confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Lt,
    Ge,
    Eq,
    Ne,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Lt => "<",
            Relation::Ge => ">=",
            Relation::Eq => "==",
            Relation::Ne => "!=",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Relation::Lt, Relation::Ge, Relation::Eq, Relation::Ne]
            .into_iter()
            .find(|r| r.as_str() == s)
    }
}

impl Serialize for Relation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Relation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Relation::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown relation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionValue {
    Number(f64),
    Flag(bool),
    Category(Option<String>),
}

/// One conjunct of a concept set's causality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub relation: Relation,
    pub value: ConditionValue,
    pub unit: String,
    /// Feature value was older than the staleness limit.
    pub stale: bool,
}

impl Condition {
    pub fn holds(&self, schema: &FeatureSchema, fv: &FeatureVector) -> bool {
        let Some(v) = schema.index_of_name(&self.feature).and_then(|i| fv.get(i)) else {
            return false;
        };
        match (&self.value, v) {
            (ConditionValue::Number(c), FeatureValue::Number(x)) => match self.relation {
                Relation::Lt => x < c,
                Relation::Ge => x >= c,
                Relation::Eq => x == c,
                Relation::Ne => x != c,
            },
            (ConditionValue::Flag(b), FeatureValue::Number(x)) => {
                let is = *x == if *b { 1.0 } else { 0.0 };
                match self.relation {
                    Relation::Eq => is,
                    Relation::Ne => !is,
                    _ => false,
                }
            }
            (ConditionValue::Category(c), FeatureValue::Category(x)) => match self.relation {
                Relation::Eq => x == c,
                Relation::Ne => x != c,
                _ => false,
            },
            _ => false,
        }
    }
}

#[derive(Default)]
struct NumericBounds {
    lower: Option<(f64, usize)>,
    upper: Option<(f64, usize)>,
}

#[derive(Default)]
struct CategoricalBounds {
    equal: Option<Option<String>>,
    not_equal: Vec<Option<String>>,
}

enum Group {
    Numeric(NumericBounds),
    Categorical(CategoricalBounds),
}

/// Collapses a path into one interval per numeric feature and one equality
/// (or a set of inequalities) per categorical feature. Boolean bounds become
/// `== true` / `== false`, or vanish when both values remain possible.
pub fn simplify_path(
    path: &TraversalPath,
    schema: &FeatureSchema,
) -> Result<Vec<Condition>, ExplainError> {
    let mut groups: Vec<(usize, Group)> = Vec::new();
    for (order, step) in path.steps.iter().enumerate() {
        let feature = step.condition.feature();
        let pos = match groups.iter().position(|(f, _)| *f == feature) {
            Some(p) => p,
            None => {
                let g = match step.condition {
                    SplitCondition::Threshold { .. } => Group::Numeric(NumericBounds::default()),
                    SplitCondition::Equality { .. } => {
                        Group::Categorical(CategoricalBounds::default())
                    }
                };
                groups.push((feature, g));
                groups.len() - 1
            }
        };
        let name = || {
            schema
                .feature(feature)
                .map_or_else(|| format!("#{feature}"), |f| f.name().to_string())
        };
        match (&mut groups[pos].1, &step.condition, step.branch) {
            (Group::Numeric(b), SplitCondition::Threshold { cutoff, .. }, Branch::Left) => {
                if b.upper.is_none_or(|(u, _)| *cutoff < u) {
                    b.upper = Some((*cutoff, b.upper.map_or(order, |(_, o)| o)));
                }
            }
            (Group::Numeric(b), SplitCondition::Threshold { cutoff, .. }, Branch::Right) => {
                if b.lower.is_none_or(|(l, _)| *cutoff > l) {
                    b.lower = Some((*cutoff, b.lower.map_or(order, |(_, o)| o)));
                }
            }
            (Group::Categorical(b), SplitCondition::Equality { category, .. }, Branch::Left) => {
                match &b.equal {
                    Some(existing) if existing != category => {
                        return Err(ExplainError::Inconsistent {
                            feature: name(),
                            detail: format!("equal to both {existing:?} and {category:?}"),
                        })
                    }
                    _ => b.equal = Some(category.clone()),
                }
            }
            (Group::Categorical(b), SplitCondition::Equality { category, .. }, Branch::Right) => {
                if !b.not_equal.contains(category) {
                    b.not_equal.push(category.clone());
                }
            }
            _ => {
                return Err(ExplainError::Inconsistent {
                    feature: name(),
                    detail: "mixed split kinds".into(),
                })
            }
        }
    }

    let mut out = Vec::new();
    for (feature, group) in groups {
        let id = schema
            .feature(feature)
            .ok_or_else(|| ExplainError::Inconsistent {
                feature: format!("#{feature}"),
                detail: "feature index outside schema".into(),
            })?;
        let condition = |relation, value| Condition {
            feature: id.name().to_string(),
            relation,
            value,
            unit: id.unit().to_string(),
            stale: false,
        };
        let inconsistent = |detail: String| ExplainError::Inconsistent {
            feature: id.name().to_string(),
            detail,
        };
        match group {
            Group::Numeric(b) => {
                let lo = b.lower.map_or(f64::NEG_INFINITY, |(v, _)| v);
                let hi = b.upper.map_or(f64::INFINITY, |(v, _)| v);
                if lo >= hi {
                    return Err(inconsistent(format!(
                        "lower bound {lo} >= upper bound {hi}"
                    )));
                }
                if id.kind() == FeatureKind::Boolean {
                    let admits = |v: f64| lo <= v && v < hi;
                    match (admits(0.0), admits(1.0)) {
                        (true, true) => {}
                        (false, true) => {
                            out.push(condition(Relation::Eq, ConditionValue::Flag(true)))
                        }
                        (true, false) => {
                            out.push(condition(Relation::Eq, ConditionValue::Flag(false)))
                        }
                        (false, false) => {
                            return Err(inconsistent(format!("no boolean value in [{lo}, {hi})")))
                        }
                    }
                    continue;
                }
                let mut bounds: Vec<(usize, Condition)> = Vec::new();
                if let Some((v, o)) = b.lower {
                    bounds.push((o, condition(Relation::Ge, ConditionValue::Number(v))));
                }
                if let Some((v, o)) = b.upper {
                    bounds.push((o, condition(Relation::Lt, ConditionValue::Number(v))));
                }
                bounds.sort_by_key(|(o, _)| *o);
                out.extend(bounds.into_iter().map(|(_, c)| c));
            }
            Group::Categorical(b) => match b.equal {
                Some(eq) => {
                    if b.not_equal.contains(&eq) {
                        return Err(inconsistent(format!("both == and != {eq:?}")));
                    }
                    out.push(condition(Relation::Eq, ConditionValue::Category(eq)));
                }
                None => out.extend(
                    b.not_equal
                        .into_iter()
                        .map(|c| condition(Relation::Ne, ConditionValue::Category(c))),
                ),
            },
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionTime {
    pub seconds: f64,
    pub wall: DateTime<Utc>,
}

/// The explanation payload: (behaviour, causality, time).
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSet {
    pub behaviour: BehaviourLabel,
    pub causality: Vec<Condition>,
    pub time: MissionTime,
    pub confidence: f64,
}

pub fn extract_concept_set(
    path: &TraversalPath,
    state: &VehicleState,
    schema: &FeatureSchema,
) -> Result<ConceptSet, ExplainError> {
    Ok(ConceptSet {
        behaviour: path.label,
        causality: simplify_path(path, schema)?,
        time: MissionTime {
            seconds: state.t,
            wall: state.wall,
        },
        confidence: path.confidence,
    })
}

/// Feature vector with per-feature staleness flags.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFeatures {
    pub features: FeatureVector,
    pub stale: Vec<bool>,
}

impl From<FeatureVector> for AnnotatedFeatures {
    fn from(features: FeatureVector) -> Self {
        let stale = vec![false; features.len()];
        Self { features, stale }
    }
}

/// Marks features whose last update is older than `max_age` seconds. Values
/// are kept as last known; only the annotation changes.
pub fn staleness_guard(fv: &FeatureVector, ages: &[f64], max_age: f64) -> AnnotatedFeatures {
    let stale = (0..fv.len())
        .map(|i| ages.get(i).is_some_and(|a| *a > max_age))
        .collect();
    AnnotatedFeatures {
        features: fv.clone(),
        stale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTrigger {
    MissionStart,
    BehaviourChange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationEvent {
    pub concept_set: ConceptSet,
    pub previous_behaviour: Option<BehaviourLabel>,
    pub trigger: EventTrigger,
    pub sentence: Option<String>,
}

/// JSON-lines form of an [`ExplanationEvent`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub t: f64,
    pub wall: String,
    pub behaviour: BehaviourLabel,
    pub previous: Option<BehaviourLabel>,
    pub trigger: EventTrigger,
    pub confidence: f64,
    pub conditions: Vec<Condition>,
    pub sentence: Option<String>,
}

impl ExplanationEvent {
    pub fn to_record(&self) -> EventRecord {
        let cs = &self.concept_set;
        EventRecord {
            t: cs.time.seconds,
            wall: format_wall(&cs.time.wall),
            behaviour: cs.behaviour,
            previous: self.previous_behaviour,
            trigger: self.trigger,
            confidence: cs.confidence,
            conditions: cs.causality.clone(),
            sentence: self.sentence.clone(),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("event serializes")
    }
}

/// Stateful transition detector over one ordered stream.
///
/// With `min_dwell` of 2 or more, a new prediction must persist for that
/// many consecutive ticks before it is reported; the event is built from
/// the tick that confirms it.
#[derive(Debug)]
pub struct EventDetector<'t> {
    tree: &'t DecisionTree,
    min_dwell: usize,
    current: Option<BehaviourLabel>,
    pending: Option<(BehaviourLabel, usize)>,
    last_t: Option<f64>,
}

impl<'t> EventDetector<'t> {
    pub fn new(tree: &'t DecisionTree) -> Self {
        Self::with_min_dwell(tree, 0)
    }

    pub fn with_min_dwell(tree: &'t DecisionTree, min_dwell: usize) -> Self {
        Self {
            tree,
            min_dwell,
            current: None,
            pending: None,
            last_t: None,
        }
    }

    pub fn tree(&self) -> &DecisionTree {
        self.tree
    }

    /// Feeds one tick; returns an event if this tick starts the mission or
    /// changes the reported behaviour.
    pub fn push(
        &mut self,
        state: &VehicleState,
        features: &AnnotatedFeatures,
    ) -> Result<Option<ExplanationEvent>, ExplainError> {
        if let Some(previous) = self.last_t {
            if state.t <= previous {
                return Err(ExplainError::TimestampRegression {
                    previous,
                    t: state.t,
                });
            }
        }
        let path = traverse(self.tree, &features.features)?;
        self.last_t = Some(state.t);

        let trigger = match self.current {
            None => EventTrigger::MissionStart,
            Some(current) if current == path.label => {
                self.pending = None;
                return Ok(None);
            }
            Some(_) => {
                if self.min_dwell > 1 {
                    let seen = match self.pending {
                        Some((label, n)) if label == path.label => n + 1,
                        _ => 1,
                    };
                    if seen < self.min_dwell {
                        self.pending = Some((path.label, seen));
                        return Ok(None);
                    }
                }
                EventTrigger::BehaviourChange
            }
        };
        self.pending = None;
        let previous_behaviour = self.current.replace(path.label);
        let mut concept_set = extract_concept_set(&path, state, self.tree.schema())?;
        for c in &mut concept_set.causality {
            if let Some(i) = self.tree.schema().index_of_name(&c.feature) {
                c.stale = features.stale.get(i).copied().unwrap_or(false);
            }
        }
        Ok(Some(ExplanationEvent {
            concept_set,
            previous_behaviour,
            trigger,
            sentence: None,
        }))
    }
}

/// Replays a whole stream through a fresh detector without debouncing.
pub fn detect_events<'a, I>(
    tree: &DecisionTree,
    stream: I,
) -> Result<Vec<ExplanationEvent>, ExplainError>
where
    I: IntoIterator<Item = (&'a VehicleState, FeatureVector)>,
{
    let mut detector = EventDetector::new(tree);
    let mut events = Vec::new();
    for (state, fv) in stream {
        if let Some(e) = detector.push(state, &AnnotatedFeatures::from(fv))? {
            events.push(e);
        }
    }
    Ok(events)
}
