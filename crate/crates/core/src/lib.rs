//! Explaining a behaviour-based vehicle autonomy through a distilled decision tree.
//!
//! The pipeline has four stages, each in its own module:
//!
//! 1. [`helm_sim`] runs a priority-arbitrated helm over a mission and emits a
//!    labelled telemetry trace.
//! 2. [`distiller`] fits a CART decision tree to `(state, behaviour)` pairs
//!    taken from such traces. It never sees the helm's internals.
//! 3. [`explainer`] walks the tree for each incoming state, simplifies the
//!    root-to-leaf path and emits `(behaviour, causality, time)` concept sets
//!    whenever the predicted behaviour changes.
//! 4. [`verbalizer`] turns concept sets into operator-readable sentences using
//!    a data-driven lexicon.
//!
//! [`telemetry`] holds the shared state model, the feature schema and the
//! JSON-lines trace format.

pub mod distiller;
pub mod explainer;
pub mod helm_sim;
pub mod telemetry;
pub mod verbalizer;

pub use distiller::{DecisionTree, FitParams, SplitCondition};
pub use explainer::{ConceptSet, Condition, EventDetector, ExplanationEvent, TraversalPath};
pub use helm_sim::{HelmConfig, MissionPlan, Scenario};
pub use telemetry::{BehaviourLabel, FeatureSchema, FeatureVector, TraceRecord, VehicleState};
pub use verbalizer::{Lexicon, Realizer, Sentence, TemplateRealizer, TimeMode};
