//! Vehicle state model, feature encoding and the JSON-lines trace format.
//!
//! One trace line is one JSON object with the keys `t`, `wall`, `x`, `y`,
//! `depth`, `speed`, `heading`, `battery`, `objective_id`,
//! `objective_complete`, `obstacle_range`, `in_exclusion_zone`,
//! `gps_fix_age` and, for labelled traces, `behaviour`. `obstacle_range` is
//! either a number or the string `"inf"` when nothing is detected.

use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

/// Encoding of "no obstacle detected" inside a [`FeatureVector`].
pub const NO_OBSTACLE_SENTINEL: f64 = 1.0e9;

/// Keys of a trace line, in canonical order.
pub const TRACE_KEYS: [&str; 14] = [
    "t",
    "wall",
    "x",
    "y",
    "depth",
    "speed",
    "heading",
    "battery",
    "objective_id",
    "objective_complete",
    "obstacle_range",
    "in_exclusion_zone",
    "gps_fix_age",
    "behaviour",
];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: field `{field}`: {reason}")]
    Field {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: unknown field `{field}`")]
    UnknownField { line: usize, field: String },
    #[error("line {line}: unknown behaviour label `{value}`")]
    UnknownBehaviour { line: usize, value: String },
    #[error(
        "timestamp regression: line {previous_line} has t={previous_t}, line {line} has t={t}"
    )]
    TimestampRegression {
        previous_line: usize,
        previous_t: f64,
        line: usize,
        t: f64,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The closed set of helm behaviours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BehaviourLabel {
    Goto,
    Transit,
    Survey,
    Wait,
    Gps,
    AvoidObstacles,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown behaviour label `{0}`")]
pub struct UnknownLabel(pub String);

impl BehaviourLabel {
    pub const ALL: [BehaviourLabel; 6] = [
        BehaviourLabel::Goto,
        BehaviourLabel::Transit,
        BehaviourLabel::Survey,
        BehaviourLabel::Wait,
        BehaviourLabel::Gps,
        BehaviourLabel::AvoidObstacles,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviourLabel::Goto => "goto",
            BehaviourLabel::Transit => "transit",
            BehaviourLabel::Survey => "survey",
            BehaviourLabel::Wait => "wait",
            BehaviourLabel::Gps => "gps",
            BehaviourLabel::AvoidObstacles => "avoid-obstacles",
        }
    }

    /// Position in [`BehaviourLabel::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for BehaviourLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviourLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BehaviourLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

impl Serialize for BehaviourLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for BehaviourLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One telemetry tick.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    /// Seconds since mission start.
    pub t: f64,
    pub wall: DateTime<Utc>,
    pub x: f64,
    pub y: f64,
    /// Metres below the surface.
    pub depth: f64,
    /// Speed over ground, m/s.
    pub speed: f64,
    /// Degrees in `[0, 360)`.
    pub heading: f64,
    /// Percent.
    pub battery: f64,
    pub objective_id: Option<String>,
    pub objective_complete: bool,
    /// Metres to the nearest detected obstacle; `f64::INFINITY` when none.
    pub obstacle_range: f64,
    pub in_exclusion_zone: bool,
    pub gps_fix_age: f64,
}

impl VehicleState {
    /// Checks the numeric invariants, naming the first offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let finite = [
            ("t", self.t),
            ("x", self.x),
            ("y", self.y),
            ("depth", self.depth),
            ("speed", self.speed),
            ("heading", self.heading),
            ("battery", self.battery),
            ("gps_fix_age", self.gps_fix_age),
        ];
        for (field, v) in finite {
            if !v.is_finite() {
                return Err((field, format!("non-finite value {v}")));
            }
        }
        for (field, v) in [
            ("t", self.t),
            ("depth", self.depth),
            ("speed", self.speed),
            ("gps_fix_age", self.gps_fix_age),
        ] {
            if v < 0.0 {
                return Err((field, format!("negative value {v}")));
            }
        }
        if !(0.0..360.0).contains(&self.heading) {
            return Err(("heading", format!("{} outside [0, 360)", self.heading)));
        }
        if !(0.0..=100.0).contains(&self.battery) {
            return Err(("battery", format!("{} outside [0, 100]", self.battery)));
        }
        if self.obstacle_range.is_nan() || self.obstacle_range < 0.0 {
            return Err((
                "obstacle_range",
                format!("invalid value {}", self.obstacle_range),
            ));
        }
        if self.obstacle_range == f64::NEG_INFINITY {
            return Err(("obstacle_range", "negative infinity".into()));
        }
        Ok(())
    }

    pub fn obstacle_detected(&self) -> bool {
        self.obstacle_range.is_finite()
    }
}

/// A tick of telemetry, optionally labelled with the behaviour the autonomy
/// selected for it. Inference streams carry no label.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub state: VehicleState,
    pub behaviour: Option<BehaviourLabel>,
}

impl TraceRecord {
    pub fn labelled(state: VehicleState, behaviour: BehaviourLabel) -> Self {
        Self {
            state,
            behaviour: Some(behaviour),
        }
    }

    /// Canonical single-line JSON form, without a trailing newline.
    pub fn to_line(&self) -> String {
        let s = &self.state;
        let mut out = String::with_capacity(256);
        out.push('{');
        push_kv(&mut out, "t", &number(s.t));
        push_kv(&mut out, "wall", &json_str(&format_wall(&s.wall)));
        push_kv(&mut out, "x", &number(s.x));
        push_kv(&mut out, "y", &number(s.y));
        push_kv(&mut out, "depth", &number(s.depth));
        push_kv(&mut out, "speed", &number(s.speed));
        push_kv(&mut out, "heading", &number(s.heading));
        push_kv(&mut out, "battery", &number(s.battery));
        let objective = match &s.objective_id {
            Some(id) => json_str(id),
            None => "null".to_string(),
        };
        push_kv(&mut out, "objective_id", &objective);
        push_kv(
            &mut out,
            "objective_complete",
            bool_str(s.objective_complete),
        );
        let range = if s.obstacle_range.is_finite() {
            number(s.obstacle_range)
        } else {
            "\"inf\"".to_string()
        };
        push_kv(&mut out, "obstacle_range", &range);
        push_kv(&mut out, "in_exclusion_zone", bool_str(s.in_exclusion_zone));
        push_kv(&mut out, "gps_fix_age", &number(s.gps_fix_age));
        if let Some(b) = self.behaviour {
            push_kv(&mut out, "behaviour", &json_str(b.as_str()));
        }
        out.pop();
        out.push('}');
        out
    }
}

fn push_kv(out: &mut String, key: &str, value: &str) {
    out.push('"');
    out.push_str(key);
    out.push_str("\":");
    out.push_str(value);
    out.push(',');
}

fn number(v: f64) -> String {
    serde_json::Number::from_f64(v)
        .map(|n| n.to_string())
        .unwrap_or_else(|| "null".to_string())
}

fn json_str(s: &str) -> String {
    Value::String(s.to_string()).to_string()
}

fn bool_str(b: bool) -> &'static str {
    if b {
        "true"
    } else {
        "false"
    }
}

/// ISO 8601 UTC rendering used by trace lines and event output.
pub fn format_wall(wall: &DateTime<Utc>) -> String {
    wall.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Parses one trace line. `line_no` is 1-based and only used in errors.
pub fn parse_trace_record(line: &str, line_no: usize) -> Result<TraceRecord, TraceError> {
    let obj: Map<String, Value> =
        serde_json::from_str(line).map_err(|source| TraceError::Json {
            line: line_no,
            source,
        })?;
    if let Some(unknown) = obj.keys().find(|k| !TRACE_KEYS.contains(&k.as_str())) {
        return Err(TraceError::UnknownField {
            line: line_no,
            field: unknown.clone(),
        });
    }
    let fields = Fields {
        obj: &obj,
        line: line_no,
    };

    let wall_text = fields.string("wall")?;
    let wall = DateTime::parse_from_rfc3339(&wall_text)
        .map_err(|e| fields.error("wall", format!("not an ISO 8601 instant: {e}")))?
        .with_timezone(&Utc);

    let objective_id = match fields.get("objective_id")? {
        Value::Null => None,
        Value::String(s) => Some(s.clone()),
        other => {
            return Err(fields.error(
                "objective_id",
                format!("expected string or null, got {other}"),
            ))
        }
    };

    let obstacle_range = match fields.get("obstacle_range")? {
        Value::String(s) if s == "inf" => f64::INFINITY,
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| fields.error("obstacle_range", "not representable as f64".into()))?,
        other => {
            return Err(fields.error(
                "obstacle_range",
                format!("expected number or \"inf\", got {other}"),
            ))
        }
    };

    let behaviour = match obj.get("behaviour") {
        None => None,
        Some(Value::String(s)) => Some(s.parse().map_err(|_| TraceError::UnknownBehaviour {
            line: line_no,
            value: s.clone(),
        })?),
        Some(other) => {
            return Err(fields.error("behaviour", format!("expected string, got {other}")))
        }
    };

    let state = VehicleState {
        t: fields.number("t")?,
        wall,
        x: fields.number("x")?,
        y: fields.number("y")?,
        depth: fields.number("depth")?,
        speed: fields.number("speed")?,
        heading: fields.number("heading")?,
        battery: fields.number("battery")?,
        objective_id,
        objective_complete: fields.boolean("objective_complete")?,
        obstacle_range,
        in_exclusion_zone: fields.boolean("in_exclusion_zone")?,
        gps_fix_age: fields.number("gps_fix_age")?,
    };
    state
        .validate()
        .map_err(|(field, reason)| fields.error(field, reason))?;
    Ok(TraceRecord { state, behaviour })
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    line: usize,
}

impl Fields<'_> {
    fn error(&self, field: &'static str, reason: String) -> TraceError {
        TraceError::Field {
            line: self.line,
            field,
            reason,
        }
    }

    fn get(&self, field: &'static str) -> Result<&Value, TraceError> {
        self.obj
            .get(field)
            .ok_or_else(|| self.error(field, "missing".into()))
    }

    fn number(&self, field: &'static str) -> Result<f64, TraceError> {
        match self.get(field)? {
            Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| self.error(field, "not representable as f64".into())),
            other => Err(self.error(field, format!("expected number, got {other}"))),
        }
    }

    fn boolean(&self, field: &'static str) -> Result<bool, TraceError> {
        match self.get(field)? {
            Value::Bool(b) => Ok(*b),
            other => Err(self.error(field, format!("expected boolean, got {other}"))),
        }
    }

    fn string(&self, field: &'static str) -> Result<String, TraceError> {
        match self.get(field)? {
            Value::String(s) => Ok(s.clone()),
            other => Err(self.error(field, format!("expected string, got {other}"))),
        }
    }
}

/// Incremental trace reader that enforces strictly increasing timestamps.
/// Blank lines are skipped but still counted for line numbers.
#[derive(Debug, Default)]
pub struct TraceParser {
    line_no: usize,
    last: Option<(usize, f64)>,
}

impl TraceParser {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds the next raw line. Returns `Ok(None)` for blank lines.
    pub fn push_line(&mut self, line: &str) -> Result<Option<TraceRecord>, TraceError> {
        self.line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            return Ok(None);
        }
        let record = parse_trace_record(trimmed, self.line_no)?;
        if let Some((previous_line, previous_t)) = self.last {
            if record.state.t <= previous_t {
                return Err(TraceError::TimestampRegression {
                    previous_line,
                    previous_t,
                    line: self.line_no,
                    t: record.state.t,
                });
            }
        }
        self.last = Some((self.line_no, record.state.t));
        Ok(Some(record))
    }
}

/// Reads a whole newline-delimited trace.
pub fn read_trace<R: BufRead>(source: R) -> Result<Vec<TraceRecord>, TraceError> {
    let mut parser = TraceParser::new();
    let mut records = Vec::new();
    for line in source.lines() {
        if let Some(r) = parser.push_line(&line?)? {
            records.push(r);
        }
    }
    Ok(records)
}

/// Writes records as JSON lines.
pub fn write_trace<W: std::io::Write>(mut sink: W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(sink, "{}", r.to_line())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Boolean,
    Categorical,
}

/// Every state field the distiller can consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureId {
    Battery,
    Depth,
    Speed,
    ObstacleRange,
    GpsFixAge,
    ObjectiveComplete,
    InExclusionZone,
    ObjectiveId,
    X,
    Y,
    Heading,
}

impl FeatureId {
    pub const ALL: [FeatureId; 11] = [
        FeatureId::Battery,
        FeatureId::Depth,
        FeatureId::Speed,
        FeatureId::ObstacleRange,
        FeatureId::GpsFixAge,
        FeatureId::ObjectiveComplete,
        FeatureId::InExclusionZone,
        FeatureId::ObjectiveId,
        FeatureId::X,
        FeatureId::Y,
        FeatureId::Heading,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureId::Battery => "battery",
            FeatureId::Depth => "depth",
            FeatureId::Speed => "speed",
            FeatureId::ObstacleRange => "obstacle_range",
            FeatureId::GpsFixAge => "gps_fix_age",
            FeatureId::ObjectiveComplete => "objective_complete",
            FeatureId::InExclusionZone => "in_exclusion_zone",
            FeatureId::ObjectiveId => "objective_id",
            FeatureId::X => "x",
            FeatureId::Y => "y",
            FeatureId::Heading => "heading",
        }
    }

    pub fn kind(self) -> FeatureKind {
        match self {
            FeatureId::ObjectiveComplete | FeatureId::InExclusionZone => FeatureKind::Boolean,
            FeatureId::ObjectiveId => FeatureKind::Categorical,
            _ => FeatureKind::Numeric,
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            FeatureId::Battery => "%",
            FeatureId::Depth | FeatureId::ObstacleRange | FeatureId::X | FeatureId::Y => "m",
            FeatureId::Speed => "m/s",
            FeatureId::GpsFixAge => "s",
            FeatureId::Heading => "deg",
            _ => "",
        }
    }

    pub fn from_name(name: &str) -> Option<FeatureId> {
        FeatureId::ALL.into_iter().find(|f| f.name() == name)
    }

    fn extract(self, s: &VehicleState) -> FeatureValue {
        let flag = |b: bool| FeatureValue::Number(if b { 1.0 } else { 0.0 });
        match self {
            FeatureId::Battery => FeatureValue::Number(s.battery),
            FeatureId::Depth => FeatureValue::Number(s.depth),
            FeatureId::Speed => FeatureValue::Number(s.speed),
            FeatureId::ObstacleRange => FeatureValue::Number(if s.obstacle_range.is_finite() {
                s.obstacle_range
            } else {
                NO_OBSTACLE_SENTINEL
            }),
            FeatureId::GpsFixAge => FeatureValue::Number(s.gps_fix_age),
            FeatureId::ObjectiveComplete => flag(s.objective_complete),
            FeatureId::InExclusionZone => flag(s.in_exclusion_zone),
            FeatureId::ObjectiveId => FeatureValue::Category(s.objective_id.clone()),
            FeatureId::X => FeatureValue::Number(s.x),
            FeatureId::Y => FeatureValue::Number(s.y),
            FeatureId::Heading => FeatureValue::Number(s.heading),
        }
    }
}

/// Serialized description of one schema slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub kind: FeatureKind,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("feature `{0}` listed twice")]
    Duplicate(String),
    #[error("feature `{name}` declared as {declared:?}/{declared_unit:?}, expected {expected:?}/{expected_unit:?}")]
    Mismatch {
        name: String,
        declared: FeatureKind,
        declared_unit: String,
        expected: FeatureKind,
        expected_unit: String,
    },
    #[error("schema is empty")]
    Empty,
}

/// Ordered list of features fed to the tree. The standard schema leaves out
/// raw x/y position and heading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSchema {
    features: Vec<FeatureId>,
    fingerprint: u64,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::standard()
    }
}

impl FeatureSchema {
    /// Decision-relevant trigger features come first so they win exact
    /// impurity ties against features that merely track mission time.
    pub fn standard() -> Self {
        Self::new(vec![
            FeatureId::ObstacleRange,
            FeatureId::GpsFixAge,
            FeatureId::ObjectiveId,
            FeatureId::Battery,
            FeatureId::ObjectiveComplete,
            FeatureId::InExclusionZone,
            FeatureId::Depth,
            FeatureId::Speed,
        ])
        .expect("standard schema is valid")
    }

    pub fn new(features: Vec<FeatureId>) -> Result<Self, SchemaError> {
        if features.is_empty() {
            return Err(SchemaError::Empty);
        }
        for (i, f) in features.iter().enumerate() {
            if features[..i].contains(f) {
                return Err(SchemaError::Duplicate(f.name().to_string()));
            }
        }
        let fingerprint = fingerprint(&features);
        Ok(Self {
            features,
            fingerprint,
        })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, SchemaError> {
        let features = names
            .iter()
            .map(|n| {
                let n = n.as_ref().trim();
                FeatureId::from_name(n).ok_or_else(|| SchemaError::UnknownFeature(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(features)
    }

    pub fn from_descriptors(descriptors: &[FeatureDescriptor]) -> Result<Self, SchemaError> {
        let mut features = Vec::with_capacity(descriptors.len());
        for d in descriptors {
            let id = FeatureId::from_name(&d.name)
                .ok_or_else(|| SchemaError::UnknownFeature(d.name.clone()))?;
            if id.kind() != d.kind || id.unit() != d.unit {
                return Err(SchemaError::Mismatch {
                    name: d.name.clone(),
                    declared: d.kind,
                    declared_unit: d.unit.clone(),
                    expected: id.kind(),
                    expected_unit: id.unit().to_string(),
                });
            }
            features.push(id);
        }
        Self::new(features)
    }

    pub fn descriptors(&self) -> Vec<FeatureDescriptor> {
        self.features
            .iter()
            .map(|f| FeatureDescriptor {
                name: f.name().to_string(),
                kind: f.kind(),
                unit: f.unit().to_string(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureId] {
        &self.features
    }

    pub fn feature(&self, index: usize) -> Option<FeatureId> {
        self.features.get(index).copied()
    }

    pub fn index_of(&self, id: FeatureId) -> Option<usize> {
        self.features.iter().position(|f| *f == id)
    }

    pub fn index_of_name(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name() == name)
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint)
    }

    pub fn featurize(&self, state: &VehicleState) -> FeatureVector {
        FeatureVector {
            values: self.features.iter().map(|f| f.extract(state)).collect(),
            fingerprint: self.fingerprint,
        }
    }
}

// FNV-1a over "name:kind:unit;" for each slot.
fn fingerprint(features: &[FeatureId]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for f in features {
        let slot = format!("{}:{:?}:{};", f.name(), f.kind(), f.unit());
        for b in slot.bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

/// Featurizes with the standard schema.
pub fn featurize(state: &VehicleState) -> FeatureVector {
    FeatureSchema::standard().featurize(state)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    /// Numeric and boolean (0/1) features.
    Number(f64),
    Category(Option<String>),
}

impl FeatureValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            FeatureValue::Number(v) => Some(*v),
            FeatureValue::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&Option<String>> {
        match self {
            FeatureValue::Category(c) => Some(c),
            FeatureValue::Number(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<FeatureValue>,
    /// Fingerprint of the schema that produced the vector.
    pub fingerprint: u64,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&FeatureValue> {
        self.values.get(index)
    }
}
