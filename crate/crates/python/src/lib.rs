//! Python bindings for the dstkit core crate.
//!
//! Configuration objects are thin wrappers over the Rust types. Summaries and
//! reports come back as plain dicts built from their JSON form, so Python sees
//! the same field names as the files the toolkit writes.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use dstkit::corpus::DialogueState;
use dstkit::pipeline::{self, BackendKind};
use dstkit::prompting::{self, Mode, SegmentTokens};
use dstkit::schema::{self as core_schema, DescriptionConfig, Provenance, SlotKey};

create_exception!(
    pydstkit,
    DstkitError,
    PyException,
    "Raised for any failure inside dstkit."
);

fn to_py(err: dstkit::Error) -> PyErr {
    DstkitError::new_err(format!("[{}] {err}", err.module()))
}

fn to_dict<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| DstkitError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn exclusions(list: Option<Vec<String>>) -> Option<Vec<String>> {
    list.map(|l| {
        l.into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    })
}

/// A parsed and validated schema.
#[pyclass(name = "Schema", module = "pydstkit", frozen)]
struct PySchema {
    inner: core_schema::Schema,
}

#[pymethods]
impl PySchema {
    /// Loads a schema file. `exclude=None` applies the dataset's default
    /// exclusions; pass an empty list to keep every domain.
    #[staticmethod]
    #[pyo3(signature = (path, dataset = "multiwoz22", exclude = None))]
    fn load(path: PathBuf, dataset: &str, exclude: Option<Vec<String>>) -> PyResult<Self> {
        let provenance: Provenance = dataset.parse().map_err(to_py)?;
        let schema = core_schema::parse_schema(&path, provenance).map_err(to_py)?;
        let excluded = exclusions(exclude).unwrap_or_else(|| provenance.default_exclusions().into_iter().collect());
        Ok(PySchema {
            inner: schema.filter_domains(&excluded),
        })
    }

    #[getter]
    fn dataset(&self) -> &'static str {
        self.inner.provenance.as_str()
    }

    #[getter]
    fn domains(&self) -> Vec<String> {
        self.inner.domains.iter().map(|d| d.name.clone()).collect()
    }

    /// `(domain, slot, is_categorical)` for every pair, in schema order.
    fn pairs(&self) -> Vec<(String, String, bool)> {
        self.inner
            .pairs()
            .map(|(d, s)| (d.name.clone(), s.name.clone(), s.is_categorical))
            .collect()
    }

    /// Possible values of a categorical slot; empty for non-categorical ones.
    fn possible_values(&self, domain: &str, slot: &str) -> PyResult<Vec<String>> {
        self.inner
            .slot(domain, slot)
            .map(|s| s.possible_values.clone())
            .ok_or_else(|| DstkitError::new_err(format!("unknown slot {domain}-{slot}")))
    }

    fn counts(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &pipeline::SchemaCounts::of(&self.inner))
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    fn __len__(&self) -> usize {
        self.inner.num_pairs()
    }

    fn __repr__(&self) -> String {
        format!(
            "Schema(dataset={}, domains={}, pairs={})",
            self.inner.provenance,
            self.inner.domains.len(),
            self.inner.num_pairs()
        )
    }
}

fn state_from_map(map: HashMap<(String, String), String>) -> PyResult<DialogueState> {
    let mut state = DialogueState::new();
    for ((domain, slot), value) in map {
        state.insert_value(SlotKey::new(domain, slot), value).map_err(to_py)?;
    }
    Ok(state)
}

/// Renders a state dict `{(domain, slot): value}` as a sequential target.
#[pyfunction]
fn sequential_target(state: HashMap<(String, String), String>, schema: &PySchema) -> PyResult<String> {
    let state = state_from_map(state)?;
    Ok(prompting::sequential_target(
        &state,
        &schema.inner,
        &SegmentTokens::default(),
    ))
}

/// Parses a sequential decoder output into `({(domain, slot): value}, malformed_segments)`.
#[pyfunction]
fn parse_sequential(output: &str, schema: &PySchema) -> (BTreeMap<(String, String), String>, usize) {
    let parsed = prompting::parse_sequential(output, &schema.inner, &SegmentTokens::default());
    let state = parsed
        .state
        .iter()
        .map(|(k, v)| ((k.domain.clone(), k.slot.clone()), v.primary().to_string()))
        .collect();
    (state, parsed.malformed_segments)
}

/// Everything a preprocess, decode, evaluate or stats run depends on.
#[pyclass(name = "RunConfig", module = "pydstkit", frozen)]
struct PyRunConfig {
    inner: pipeline::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (
        schema,
        dialogues,
        *,
        dataset = "multiwoz22",
        mode = "independent",
        desc = "none",
        descriptions = None,
        seed = 0,
        exclude = None,
        backend = "oracle",
        endpoint = None,
        max_in_flight = 8,
        timeout = 60.0,
        max_tokens = 64,
        train_dialogues = None,
        match_mode = "exact",
        aggregation = "per-turn",
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        schema: PathBuf,
        dialogues: PathBuf,
        dataset: &str,
        mode: &str,
        desc: &str,
        descriptions: Option<PathBuf>,
        seed: u64,
        exclude: Option<Vec<String>>,
        backend: &str,
        endpoint: Option<String>,
        max_in_flight: usize,
        timeout: f64,
        max_tokens: usize,
        train_dialogues: Option<PathBuf>,
        match_mode: &str,
        aggregation: &str,
    ) -> PyResult<Self> {
        let dataset: Provenance = dataset.parse().map_err(to_py)?;
        let mut config = pipeline::RunConfig::new(dataset, schema, dialogues);
        config.mode = mode.parse::<Mode>().map_err(to_py)?;
        config.descriptions = DescriptionConfig::from_flags(desc, seed).map_err(to_py)?;
        config.descriptions_path = descriptions;
        config.excluded_domains = exclusions(exclude);
        config.backend = backend.parse::<BackendKind>().map_err(to_py)?;
        config.endpoint = endpoint;
        config.max_in_flight = max_in_flight;
        config.timeout = Duration::try_from_secs_f64(timeout)
            .map_err(|e| DstkitError::new_err(format!("[config] bad timeout: {e}")))?;
        config.max_output_tokens = max_tokens;
        config.train_dialogues_path = train_dialogues;
        config.eval = pipeline::eval_options(match_mode, aggregation).map_err(to_py)?;
        Ok(PyRunConfig { inner: config })
    }

    /// The schema this configuration evaluates against, exclusions applied.
    fn load_schema(&self) -> PyResult<PySchema> {
        Ok(PySchema {
            inner: self.inner.load_schema().map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(dataset={}, mode={}, backend={:?})",
            self.inner.dataset, self.inner.mode, self.inner.backend
        )
    }
}

/// Expands the corpus into an examples file and returns the summary.
#[pyfunction]
fn preprocess(py: Python<'_>, config: &PyRunConfig, out: PathBuf) -> PyResult<Py<PyAny>> {
    let summary = py
        .detach(|| pipeline::cmd_preprocess(&config.inner, &out))
        .map_err(to_py)?;
    to_dict(py, &summary)
}

/// Decodes an examples file into a predictions file, resuming from the
/// journal unless `fresh` is set.
#[pyfunction]
#[pyo3(signature = (config, examples, out, fresh = false))]
fn decode(py: Python<'_>, config: &PyRunConfig, examples: PathBuf, out: PathBuf, fresh: bool) -> PyResult<Py<PyAny>> {
    let summary = py
        .detach(|| pipeline::cmd_decode(&config.inner, &examples, &out, fresh))
        .map_err(to_py)?;
    to_dict(py, &summary)
}

/// Scores a predictions file. Writes the report JSON when `report` is given.
#[pyfunction]
#[pyo3(signature = (config, predictions, report = None))]
fn evaluate(
    py: Python<'_>,
    config: &PyRunConfig,
    predictions: PathBuf,
    report: Option<PathBuf>,
) -> PyResult<Py<PyAny>> {
    let result = py.detach(|| match &report {
        Some(path) => pipeline::cmd_evaluate(&config.inner, &predictions, path).map(|(r, _)| r),
        None => pipeline::evaluate(&config.inner, &predictions).map(|(r, _)| r),
    });
    to_dict(py, &result.map_err(to_py)?)
}

/// Lists the turns one predictions file gets right and the other wrong.
#[pyfunction]
fn compare(py: Python<'_>, config: &PyRunConfig, a: PathBuf, b: PathBuf) -> PyResult<Py<PyAny>> {
    let (_, _, diff) = py
        .detach(|| pipeline::cmd_compare(&config.inner, &a, &b))
        .map_err(to_py)?;
    to_dict(py, &diff)
}

/// Corpus and schema statistics.
#[pyfunction]
fn stats(py: Python<'_>, config: &PyRunConfig) -> PyResult<Py<PyAny>> {
    let summary = py.detach(|| pipeline::cmd_stats(&config.inner)).map_err(to_py)?;
    to_dict(py, &summary)
}

#[pymodule]
fn pydstkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DstkitError", m.py().get_type::<DstkitError>())?;
    m.add_class::<PySchema>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(sequential_target, m)?)?;
    m.add_function(wrap_pyfunction!(parse_sequential, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    Ok(())
}
