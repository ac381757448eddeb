//! Python bindings: simulate missions, distill trees and explain traces.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use helmx_core::distiller::{self, FitParams};
use helmx_core::explainer::{AnnotatedFeatures, EventDetector};
use helmx_core::telemetry::{self, BehaviourLabel, FeatureSchema, TraceRecord};
use helmx_core::verbalizer::{self, Lexicon, Realizer, TemplateRealizer, TimeMode};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn time_mode(s: &str) -> PyResult<TimeMode> {
    s.parse().map_err(value_err)
}

/// An ordered telemetry trace, labelled or not.
#[pyclass(name = "Trace", module = "helmx", frozen)]
struct PyTrace {
    records: Vec<TraceRecord>,
}

#[pymethods]
impl PyTrace {
    /// Parses JSON-lines text.
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        let records = telemetry::read_trace(text.as_bytes()).map_err(value_err)?;
        Ok(Self { records })
    }

    fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    /// Behaviour label per tick, `None` where unlabelled.
    fn labels(&self) -> Vec<Option<&'static str>> {
        self.records
            .iter()
            .map(|r| r.behaviour.map(BehaviourLabel::as_str))
            .collect()
    }

    fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.state.t).collect()
    }

    /// The same trace without labels.
    fn unlabelled(&self) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| TraceRecord {
                state: r.state.clone(),
                behaviour: None,
            })
            .collect();
        Self { records }
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    fn __repr__(&self) -> String {
        format!("Trace({} ticks)", self.records.len())
    }
}

/// Runs a scenario given as JSON text. `seed` overrides the scenario's own.
#[pyfunction]
#[pyo3(signature = (scenario_json, seed=None))]
fn simulate(scenario_json: &str, seed: Option<u64>) -> PyResult<PyTrace> {
    let sc = helmx_core::Scenario::from_json(scenario_json).map_err(value_err)?;
    let run = sc.run_with_seed(seed.unwrap_or(sc.seed));
    Ok(PyTrace {
        records: run.records,
    })
}

/// Text of a scenario shipped with the library.
#[pyfunction]
fn bundled_scenario(name: &str) -> PyResult<&'static str> {
    use helmx_core::helm_sim::bundled;
    match name {
        "obstacle_field" => Ok(bundled::OBSTACLE_FIELD),
        "single_obstacle" => Ok(bundled::SINGLE_OBSTACLE),
        "low_battery" => Ok(bundled::LOW_BATTERY),
        other => Err(value_err(format!("no bundled scenario `{other}`"))),
    }
}

#[pyclass(name = "DecisionTree", module = "helmx", frozen)]
struct PyTree {
    tree: distiller::DecisionTree,
}

#[pymethods]
impl PyTree {
    /// Fits a tree to a labelled trace.
    #[staticmethod]
    #[pyo3(signature = (trace, max_depth=12, min_samples_leaf=5, min_impurity_decrease=1e-7, schema=None))]
    fn fit(
        trace: &PyTrace,
        max_depth: usize,
        min_samples_leaf: usize,
        min_impurity_decrease: f64,
        schema: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let schema = match schema {
            Some(names) => FeatureSchema::from_names(&names).map_err(value_err)?,
            None => FeatureSchema::standard(),
        };
        let params = FitParams {
            max_depth,
            min_samples_leaf,
            min_impurity_decrease,
        };
        let samples = distiller::samples_from_trace(&schema, &trace.records).map_err(value_err)?;
        let tree = distiller::fit_tree(&schema, &samples, &params).map_err(value_err)?;
        Ok(Self { tree })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let tree = distiller::DecisionTree::from_json(text).map_err(value_err)?;
        Ok(Self { tree })
    }

    fn to_json(&self) -> String {
        self.tree.to_json()
    }

    fn feature_names(&self) -> Vec<&'static str> {
        self.tree
            .schema()
            .features()
            .iter()
            .map(|f| f.name())
            .collect()
    }

    #[getter]
    fn depth(&self) -> usize {
        self.tree.depth()
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.tree.leaf_count()
    }

    /// Predicts from one trace line; returns `(label, confidence)`.
    fn predict(&self, line: &str) -> PyResult<(&'static str, f64)> {
        let rec = telemetry::parse_trace_record(line, 1).map_err(value_err)?;
        let fv = self.tree.schema().featurize(&rec.state);
        let p = self.tree.predict(&fv).map_err(value_err)?;
        Ok((p.label.as_str(), p.confidence))
    }

    /// Overall fidelity, per-label recall and transition fidelity.
    fn evaluate(&self, py: Python<'_>, trace: &PyTrace) -> PyResult<Py<PyAny>> {
        let samples =
            distiller::samples_from_trace(self.tree.schema(), &trace.records).map_err(value_err)?;
        let e = distiller::evaluate(&self.tree, &samples).map_err(value_err)?;
        let d = pyo3::types::PyDict::new(py);
        d.set_item("records", e.records)?;
        d.set_item("fidelity", e.fidelity)?;
        d.set_item("transitions", e.transitions)?;
        d.set_item("transition_fidelity", e.transition_fidelity)?;
        let recall = pyo3::types::PyDict::new(py);
        for (label, r) in e.recall {
            recall.set_item(label.as_str(), r)?;
        }
        d.set_item("recall", recall)?;
        Ok(d.into_any().unbind())
    }

    /// Explanation events for a trace, as JSON lines with sentences.
    #[pyo3(signature = (trace, time="mission", lexicon_json=None, min_dwell=0))]
    fn explain(
        &self,
        trace: &PyTrace,
        time: &str,
        lexicon_json: Option<&str>,
        min_dwell: usize,
    ) -> PyResult<Vec<String>> {
        let lexicon = match lexicon_json {
            Some(text) => Lexicon::from_json(text).map_err(value_err)?,
            None => Lexicon::english(),
        };
        let realizer = TemplateRealizer::new(lexicon, time_mode(time)?);
        let mut detector = EventDetector::with_min_dwell(&self.tree, min_dwell);
        let mut out = Vec::new();
        for r in &trace.records {
            let fv = self.tree.schema().featurize(&r.state);
            if let Some(mut event) = detector
                .push(&r.state, &AnnotatedFeatures::from(fv))
                .map_err(value_err)?
            {
                event.sentence = Some(
                    realizer
                        .realize(&event.concept_set)
                        .map_err(value_err)?
                        .text,
                );
                out.push(event.to_json_line());
            }
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "DecisionTree(depth={}, leaves={})",
            self.tree.depth(),
            self.tree.leaf_count()
        )
    }
}

/// `HH:MM:SS` from mission seconds; `wall` mode needs an RFC 3339 instant.
#[pyfunction]
#[pyo3(signature = (seconds, mode="mission", wall=None))]
fn format_time(seconds: f64, mode: &str, wall: Option<&str>) -> PyResult<String> {
    let mode = time_mode(mode)?;
    let wall = match wall {
        Some(w) => w.parse().map_err(value_err)?,
        None => match mode {
            TimeMode::Wall => return Err(value_err("wall mode needs a wall instant")),
            TimeMode::Mission => Default::default(),
        },
    };
    Ok(verbalizer::format_time(seconds, &wall, mode))
}

#[pymodule]
fn helmx(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrace>()?;
    m.add_class::<PyTree>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(bundled_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(format_time, m)?)?;
    let labels: Vec<&str> = BehaviourLabel::ALL.iter().map(|l| l.as_str()).collect();
    m.add("BEHAVIOURS", labels)?;
    m.add("DEFAULT_LEXICON", verbalizer::DEFAULT_LEXICON)?;
    Ok(())
}
