//! CART distillation of labelled traces into a [`DecisionTree`].
//!
//! Splits are chosen greedily by Gini impurity decrease. Numeric and
//! boolean features use `feature < cutoff` tests with cutoffs at midpoints
//! between consecutive distinct training values; categorical features use
//! one-vs-rest `feature == category` tests. Ties go to the lowest feature
//! index, then to the smallest cutoff or category.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{
    BehaviourLabel, FeatureDescriptor, FeatureKind, FeatureSchema, FeatureValue, FeatureVector,
    SchemaError, TraceRecord,
};

pub const TREE_FORMAT_VERSION: u32 = 1;

const N_LABELS: usize = BehaviourLabel::ALL.len();

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("label counts are empty")]
    EmptyCounts,
    #[error("no training records")]
    NoRecords,
    #[error("record {index} is unlabelled")]
    Unlabelled { index: usize },
    #[error("schema fingerprint mismatch: tree {expected:016x}, input {found:016x}")]
    SchemaMismatch { expected: u64, found: u64 },
    #[error("invalid fit parameters: {0}")]
    InvalidParams(String),
    #[error("malformed tree file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported tree format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tree schema: {0}")]
    Schema(#[from] SchemaError),
    #[error("tree structure: {0}")]
    Structure(String),
}

/// Per-label sample counts, indexed by [`BehaviourLabel::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelCounts([usize; N_LABELS]);

impl LabelCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I: IntoIterator<Item = BehaviourLabel>>(labels: I) -> Self {
        let mut c = Self::new();
        for l in labels {
            c.add(l);
        }
        c
    }

    pub fn add(&mut self, label: BehaviourLabel) {
        self.0[label.index()] += 1;
    }

    fn remove(&mut self, label: BehaviourLabel) {
        self.0[label.index()] -= 1;
    }

    pub fn get(&self, label: BehaviourLabel) -> usize {
        self.0[label.index()]
    }

    pub fn set(&mut self, label: BehaviourLabel, count: usize) {
        self.0[label.index()] = count;
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// Most frequent label; ties resolve to the earliest label in
    /// [`BehaviourLabel::ALL`]. `None` when empty.
    pub fn majority(&self) -> Option<BehaviourLabel> {
        if self.total() == 0 {
            return None;
        }
        let mut best = BehaviourLabel::ALL[0];
        for l in BehaviourLabel::ALL {
            if self.get(l) > self.get(best) {
                best = l;
            }
        }
        Some(best)
    }

    pub fn is_pure(&self) -> bool {
        self.0.iter().filter(|&&n| n > 0).count() <= 1
    }

    pub fn iter(&self) -> impl Iterator<Item = (BehaviourLabel, usize)> + '_ {
        BehaviourLabel::ALL.into_iter().map(|l| (l, self.get(l)))
    }

    fn gini_unchecked(&self) -> f64 {
        let n = self.total() as f64;
        1.0 - self
            .0
            .iter()
            .map(|&k| {
                let p = k as f64 / n;
                p * p
            })
            .sum::<f64>()
    }
}

/// Gini impurity `1 - sum_k p_k^2`.
pub fn gini(counts: &LabelCounts) -> Result<f64, DistillError> {
    if counts.total() == 0 {
        return Err(DistillError::EmptyCounts);
    }
    Ok(counts.gini_unchecked())
}

/// A split test. Records satisfying it go to the left child.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitCondition {
    /// `feature < cutoff`
    Threshold { feature: usize, cutoff: f64 },
    /// `feature == category`
    Equality {
        feature: usize,
        category: Option<String>,
    },
}

impl SplitCondition {
    pub fn feature(&self) -> usize {
        match self {
            SplitCondition::Threshold { feature, .. }
            | SplitCondition::Equality { feature, .. } => *feature,
        }
    }

    pub fn test(&self, value: &FeatureValue) -> bool {
        match (self, value) {
            (SplitCondition::Threshold { cutoff, .. }, FeatureValue::Number(v)) => v < cutoff,
            (SplitCondition::Equality { category, .. }, FeatureValue::Category(c)) => c == category,
            _ => false,
        }
    }

    pub fn goes_left(&self, fv: &FeatureVector) -> bool {
        fv.get(self.feature()).is_some_and(|v| self.test(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_impurity_decrease: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_samples_leaf: 5,
            min_impurity_decrease: 1e-7,
        }
    }
}

impl FitParams {
    /// No depth limit and single-sample leaves.
    pub fn unbounded() -> Self {
        Self {
            max_depth: usize::MAX,
            min_samples_leaf: 1,
            ..Self::default()
        }
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn validate(&self) -> Result<(), DistillError> {
        if self.max_depth < 1 {
            return Err(DistillError::InvalidParams("max_depth must be >= 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(DistillError::InvalidParams(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        if !(self.min_impurity_decrease >= 0.0) {
            return Err(DistillError::InvalidParams(
                "min_impurity_decrease must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureVector,
    pub label: BehaviourLabel,
}

/// Featurizes labelled trace records. Fails on the first unlabelled one.
pub fn samples_from_trace(
    schema: &FeatureSchema,
    records: &[TraceRecord],
) -> Result<Vec<Sample>, DistillError> {
    records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            let label = r.behaviour.ok_or(DistillError::Unlabelled { index })?;
            Ok(Sample {
                features: schema.featurize(&r.state),
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSplit {
    pub condition: SplitCondition,
    /// Parent impurity minus the size-weighted child impurity.
    pub decrease: f64,
}

/// Exhaustive best split over all features, or `None` if no admissible
/// split improves impurity by at least `params.min_impurity_decrease`.
pub fn best_split(
    schema: &FeatureSchema,
    samples: &[Sample],
    params: &FitParams,
) -> Option<ScoredSplit> {
    let indices: Vec<usize> = (0..samples.len()).collect();
    best_split_among(schema, samples, &indices, params)
}

fn best_split_among(
    schema: &FeatureSchema,
    samples: &[Sample],
    indices: &[usize],
    params: &FitParams,
) -> Option<ScoredSplit> {
    if indices.len() < 2 {
        return None;
    }
    let parent = LabelCounts::from_labels(indices.iter().map(|&i| samples[i].label));
    if parent.is_pure() {
        return None;
    }
    let n = indices.len() as f64;
    let parent_gini = parent.gini_unchecked();
    let min_leaf = params.min_samples_leaf.max(1);
    let mut best: Option<ScoredSplit> = None;
    let mut consider = |condition: SplitCondition, left: &LabelCounts, right: &LabelCounts| {
        let (nl, nr) = (left.total(), right.total());
        if nl < min_leaf || nr < min_leaf {
            return;
        }
        let weighted = (nl as f64 * left.gini_unchecked() + nr as f64 * right.gini_unchecked()) / n;
        // Gini is concave, so a negative value here is only rounding.
        let decrease = (parent_gini - weighted).max(0.0);
        // Strict improvement keeps the earliest candidate on ties.
        if best.as_ref().is_none_or(|b| decrease > b.decrease) {
            best = Some(ScoredSplit {
                condition,
                decrease,
            });
        }
    };

    for (feature, id) in schema.features().iter().enumerate() {
        match id.kind() {
            FeatureKind::Numeric | FeatureKind::Boolean => {
                let mut column: Vec<(f64, BehaviourLabel)> = indices
                    .iter()
                    .filter_map(|&i| {
                        let s = &samples[i];
                        s.features.get(feature)?.as_number().map(|v| (v, s.label))
                    })
                    .collect();
                if column.len() != indices.len() {
                    continue;
                }
                column.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut left = LabelCounts::new();
                let mut right = parent;
                for i in 0..column.len() - 1 {
                    left.add(column[i].1);
                    right.remove(column[i].1);
                    let (lo, hi) = (column[i].0, column[i + 1].0);
                    if lo == hi {
                        continue;
                    }
                    let cutoff = midpoint(lo, hi);
                    consider(SplitCondition::Threshold { feature, cutoff }, &left, &right);
                }
            }
            FeatureKind::Categorical => {
                let mut per_category: BTreeMap<Option<String>, LabelCounts> = BTreeMap::new();
                for &i in indices {
                    let s = &samples[i];
                    if let Some(FeatureValue::Category(c)) = s.features.get(feature) {
                        per_category.entry(c.clone()).or_default().add(s.label);
                    }
                }
                if per_category.len() < 2 {
                    continue;
                }
                for (category, left) in per_category {
                    let mut right = parent;
                    for (l, k) in left.iter() {
                        right.0[l.index()] -= k;
                    }
                    consider(
                        SplitCondition::Equality { feature, category },
                        &left,
                        &right,
                    );
                }
            }
        }
    }

    best.filter(|b| b.decrease >= params.min_impurity_decrease)
}

/// Midpoint of `lo < hi` that sends `lo` left and `hi` right.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if lo < m && m <= hi {
        m
    } else {
        hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        condition: SplitCondition,
        left: usize,
        right: usize,
        counts: LabelCounts,
    },
    Leaf {
        counts: LabelCounts,
        label: BehaviourLabel,
    },
}

impl Node {
    pub fn counts(&self) -> &LabelCounts {
        match self {
            Node::Split { counts, .. } | Node::Leaf { counts, .. } => counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: BehaviourLabel,
    /// Majority count over leaf total.
    pub confidence: f64,
    pub leaf: usize,
}

/// The distilled surrogate of the helm.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    schema: FeatureSchema,
    nodes: Vec<Node>,
    root: usize,
}

/// Grows a tree by recursive partitioning with [`best_split`].
pub fn fit_tree(
    schema: &FeatureSchema,
    samples: &[Sample],
    params: &FitParams,
) -> Result<DecisionTree, DistillError> {
    params.validate()?;
    if samples.is_empty() {
        return Err(DistillError::NoRecords);
    }
    if let Some(bad) = samples.iter().find(|s| {
        s.features.fingerprint != schema.fingerprint() || s.features.len() != schema.len()
    }) {
        return Err(DistillError::SchemaMismatch {
            expected: schema.fingerprint(),
            found: bad.features.fingerprint,
        });
    }

    struct Task {
        slot: usize,
        indices: Vec<usize>,
        depth: usize,
    }

    let leaf = |indices: &[usize]| {
        let counts = LabelCounts::from_labels(indices.iter().map(|&i| samples[i].label));
        let label = counts.majority().expect("non-empty node");
        Node::Leaf { counts, label }
    };

    let all: Vec<usize> = (0..samples.len()).collect();
    let mut nodes = vec![leaf(&all)];
    let mut stack = vec![Task {
        slot: 0,
        indices: all,
        depth: 0,
    }];
    while let Some(task) = stack.pop() {
        if task.depth >= params.max_depth {
            continue;
        }
        let Some(split) = best_split_among(schema, samples, &task.indices, params) else {
            continue;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = task
            .indices
            .iter()
            .partition(|&&i| split.condition.goes_left(&samples[i].features));
        let counts = *nodes[task.slot].counts();
        let left = nodes.len();
        nodes.push(leaf(&left_idx));
        let right = nodes.len();
        nodes.push(leaf(&right_idx));
        nodes[task.slot] = Node::Split {
            condition: split.condition,
            left,
            right,
            counts,
        };
        stack.push(Task {
            slot: right,
            indices: right_idx,
            depth: task.depth + 1,
        });
        stack.push(Task {
            slot: left,
            indices: left_idx,
            depth: task.depth + 1,
        });
    }
    Ok(DecisionTree {
        schema: schema.clone(),
        nodes,
        root: 0,
    })
}

impl DecisionTree {
    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn is_single_leaf(&self) -> bool {
        matches!(self.nodes[self.root], Node::Leaf { .. })
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Longest root-to-leaf path, counted in splits.
    pub fn depth(&self) -> usize {
        let mut deepest = 0;
        let mut stack = vec![(self.root, 0)];
        while let Some((id, d)) = stack.pop() {
            match &self.nodes[id] {
                Node::Split { left, right, .. } => {
                    stack.push((*left, d + 1));
                    stack.push((*right, d + 1));
                }
                Node::Leaf { .. } => deepest = deepest.max(d),
            }
        }
        deepest
    }

    pub fn check_schema(&self, fv: &FeatureVector) -> Result<(), DistillError> {
        if fv.fingerprint != self.schema.fingerprint() || fv.len() != self.schema.len() {
            return Err(DistillError::SchemaMismatch {
                expected: self.schema.fingerprint(),
                found: fv.fingerprint,
            });
        }
        Ok(())
    }

    /// Leaf reached by `fv`. Caller must have checked the schema.
    pub(crate) fn descend(
        &self,
        fv: &FeatureVector,
        mut visit: impl FnMut(usize, &SplitCondition, bool),
    ) -> usize {
        let mut id = self.root;
        while let Node::Split {
            condition,
            left,
            right,
            ..
        } = &self.nodes[id]
        {
            let goes_left = condition.goes_left(fv);
            visit(id, condition, goes_left);
            id = if goes_left { *left } else { *right };
        }
        id
    }

    pub(crate) fn leaf_prediction(&self, leaf: usize) -> Prediction {
        match &self.nodes[leaf] {
            Node::Leaf { counts, label } => Prediction {
                label: *label,
                confidence: counts.get(*label) as f64 / counts.total() as f64,
                leaf,
            },
            Node::Split { .. } => unreachable!("descend always ends on a leaf"),
        }
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<Prediction, DistillError> {
        self.check_schema(fv)?;
        let leaf = self.descend(fv, |_, _, _| {});
        Ok(self.leaf_prediction(leaf))
    }

    pub fn to_json(&self) -> String {
        let file = TreeFile {
            version: TREE_FORMAT_VERSION,
            fingerprint: self.schema.fingerprint_hex(),
            schema: self.schema.descriptors(),
            root: self.root,
            nodes: self.nodes.iter().map(NodeWire::from).collect(),
        };
        serde_json::to_string_pretty(&file).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DistillError> {
        let file: TreeFile = serde_json::from_str(text)?;
        if file.version != TREE_FORMAT_VERSION {
            return Err(DistillError::Version {
                found: file.version,
                expected: TREE_FORMAT_VERSION,
            });
        }
        let schema = FeatureSchema::from_descriptors(&file.schema)?;
        if file.fingerprint != schema.fingerprint_hex() {
            return Err(DistillError::Structure(format!(
                "fingerprint {} does not match schema ({})",
                file.fingerprint,
                schema.fingerprint_hex()
            )));
        }
        let nodes = file
            .nodes
            .into_iter()
            .map(Node::try_from)
            .collect::<Result<Vec<_>, _>>()?;
        let tree = DecisionTree {
            schema,
            nodes,
            root: file.root,
        };
        tree.validate()?;
        Ok(tree)
    }

    /// Checks the structural invariants: indices in range, one parent per
    /// non-root node, no cycles or orphans, kind-consistent splits and
    /// non-empty leaves whose label attains the maximum count.
    pub fn validate(&self) -> Result<(), DistillError> {
        let err = |m: String| Err(DistillError::Structure(m));
        let n = self.nodes.len();
        if n == 0 {
            return err("no nodes".into());
        }
        if self.root >= n {
            return err(format!("root {} out of range", self.root));
        }
        let mut parents = vec![0usize; n];
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Split {
                    condition,
                    left,
                    right,
                    ..
                } => {
                    for child in [*left, *right] {
                        if child >= n {
                            return err(format!("node {id}: child index {child} out of range"));
                        }
                        parents[child] += 1;
                    }
                    let feature = condition.feature();
                    let Some(fid) = self.schema.feature(feature) else {
                        return err(format!("node {id}: feature index {feature} out of range"));
                    };
                    match (condition, fid.kind()) {
                        (
                            SplitCondition::Threshold { cutoff, .. },
                            FeatureKind::Numeric | FeatureKind::Boolean,
                        ) => {
                            if !cutoff.is_finite() {
                                return err(format!("node {id}: non-finite cutoff"));
                            }
                        }
                        (SplitCondition::Equality { .. }, FeatureKind::Categorical) => {}
                        _ => {
                            return err(format!(
                                "node {id}: split kind does not match feature `{}`",
                                fid.name()
                            ))
                        }
                    }
                }
                Node::Leaf { counts, label } => {
                    if counts.total() == 0 {
                        return err(format!("node {id}: empty leaf"));
                    }
                    if counts.iter().any(|(_, k)| k > counts.get(*label)) {
                        return err(format!("node {id}: label {label} is not a majority"));
                    }
                }
            }
        }
        for (id, &p) in parents.iter().enumerate() {
            let expected = usize::from(id != self.root);
            if p != expected {
                return err(format!("node {id} has {p} parents, expected {expected}"));
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return err(format!("cycle through node {id}"));
            }
            if let Node::Split { left, right, .. } = &self.nodes[id] {
                stack.push(*left);
                stack.push(*right);
            }
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return err(format!("node {orphan} is unreachable from the root"));
        }
        Ok(())
    }
}

/// Fraction of samples whose predicted label matches the recorded one.
pub fn fidelity(tree: &DecisionTree, samples: &[Sample]) -> Result<f64, DistillError> {
    if samples.is_empty() {
        return Err(DistillError::NoRecords);
    }
    let mut hits = 0usize;
    for s in samples {
        if tree.predict(&s.features)?.label == s.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Agreement between a tree and a labelled, time-ordered trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: usize,
    pub fidelity: f64,
    /// Per-label recall, for labels present in the trace.
    pub recall: Vec<(BehaviourLabel, f64)>,
    /// Ticks whose label differs from the previous tick's.
    pub transitions: usize,
    /// Accuracy on transition ticks; `None` when there are none.
    pub transition_fidelity: Option<f64>,
}

pub fn evaluate(tree: &DecisionTree, samples: &[Sample]) -> Result<Evaluation, DistillError> {
    if samples.is_empty() {
        return Err(DistillError::NoRecords);
    }
    let mut seen = LabelCounts::new();
    let mut correct = LabelCounts::new();
    let (mut transitions, mut transition_hits) = (0usize, 0usize);
    for (i, s) in samples.iter().enumerate() {
        let hit = tree.predict(&s.features)?.label == s.label;
        seen.add(s.label);
        if hit {
            correct.add(s.label);
        }
        if i > 0 && samples[i - 1].label != s.label {
            transitions += 1;
            transition_hits += usize::from(hit);
        }
    }
    let recall = seen
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(l, n)| (l, correct.get(l) as f64 / n as f64))
        .collect();
    Ok(Evaluation {
        records: samples.len(),
        fidelity: correct.total() as f64 / samples.len() as f64,
        recall,
        transitions,
        transition_fidelity: (transitions > 0).then(|| transition_hits as f64 / transitions as f64),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    version: u32,
    fingerprint: String,
    schema: Vec<FeatureDescriptor>,
    root: usize,
    nodes: Vec<NodeWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum NodeWire {
    Threshold {
        feature: usize,
        cutoff: f64,
        left: usize,
        right: usize,
        counts: BTreeMap<BehaviourLabel, usize>,
    },
    Equality {
        feature: usize,
        category: Option<String>,
        left: usize,
        right: usize,
        counts: BTreeMap<BehaviourLabel, usize>,
    },
    Leaf {
        label: BehaviourLabel,
        counts: BTreeMap<BehaviourLabel, usize>,
    },
}

fn counts_to_wire(c: &LabelCounts) -> BTreeMap<BehaviourLabel, usize> {
    c.iter().filter(|(_, k)| *k > 0).collect()
}

fn counts_from_wire(m: &BTreeMap<BehaviourLabel, usize>) -> LabelCounts {
    let mut c = LabelCounts::new();
    for (l, k) in m {
        c.set(*l, *k);
    }
    c
}

impl From<&Node> for NodeWire {
    fn from(node: &Node) -> Self {
        match node {
            Node::Split {
                condition: SplitCondition::Threshold { feature, cutoff },
                left,
                right,
                counts,
            } => NodeWire::Threshold {
                feature: *feature,
                cutoff: *cutoff,
                left: *left,
                right: *right,
                counts: counts_to_wire(counts),
            },
            Node::Split {
                condition: SplitCondition::Equality { feature, category },
                left,
                right,
                counts,
            } => NodeWire::Equality {
                feature: *feature,
                category: category.clone(),
                left: *left,
                right: *right,
                counts: counts_to_wire(counts),
            },
            Node::Leaf { counts, label } => NodeWire::Leaf {
                label: *label,
                counts: counts_to_wire(counts),
            },
        }
    }
}

impl TryFrom<NodeWire> for Node {
    type Error = DistillError;

    fn try_from(w: NodeWire) -> Result<Self, Self::Error> {
        Ok(match w {
            NodeWire::Threshold {
                feature,
                cutoff,
                left,
                right,
                counts,
            } => Node::Split {
                condition: SplitCondition::Threshold { feature, cutoff },
                left,
                right,
                counts: counts_from_wire(&counts),
            },
            NodeWire::Equality {
                feature,
                category,
                left,
                right,
                counts,
            } => Node::Split {
                condition: SplitCondition::Equality { feature, category },
                left,
                right,
                counts: counts_from_wire(&counts),
            },
            NodeWire::Leaf { label, counts } => Node::Leaf {
                label,
                counts: counts_from_wire(&counts),
            },
        })
    }
}
