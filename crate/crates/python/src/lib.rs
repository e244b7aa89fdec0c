//! Python bindings: configs, descriptions, synthetic universes, search and
//! the objective estimators.

use std::sync::Arc;

use domain_bridge::search::Candidate;
use domain_bridge::seed::{explicit_seed_set, SeedPlan};
use domain_bridge::synthetic::{brute_force_optimum, Universe, UniverseSpec};
use domain_bridge::{ClassLabel, Config, Description, Error, ObjectiveValue, SearchReport, SearchTree};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

create_exception!(domain_bridge, DomainBridgeError, PyException);
create_exception!(domain_bridge, BudgetExceededError, DomainBridgeError);
create_exception!(domain_bridge, OracleError, DomainBridgeError);
create_exception!(domain_bridge, ConfigMismatchError, DomainBridgeError);

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::BudgetExceeded(_) => BudgetExceededError::new_err(msg),
        Error::OracleUnavailable(_) | Error::OracleProtocol(_) | Error::MalformedSample(_) => {
            OracleError::new_err(msg)
        }
        Error::ConfigMismatch { .. } => ConfigMismatchError::new_err(msg),
        _ => DomainBridgeError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for domain_bridge::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    DomainBridgeError::new_err(e.to_string())
}

/// Search parameters. Keyword arguments override the defaults; `lambda_`
/// stands in for the reserved word.
#[pyclass(name = "Config", module = "domain_bridge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(py: Python<'_>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut value = serde_json::to_value(Config::default()).map_err(json_err)?;
        if let Some(kw) = overrides {
            let text: String = py.import("json")?.call_method1("dumps", (kw,))?.extract()?;
            let patch: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
            for (k, v) in patch.as_object().into_iter().flatten() {
                let key = if k == "lambda_" { "lambda" } else { k.as_str() };
                value[key] = v.clone();
            }
        }
        let inner: Config = serde_json::from_value(value).map_err(json_err)?;
        inner.validate().py()?;
        Ok(PyConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: Config = serde_json::from_str(text).map_err(json_err)?;
        inner.validate().py()?;
        Ok(PyConfig { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        domain_bridge::canonical::to_canonical_string(&self.inner).py()
    }

    fn digest(&self) -> String {
        self.inner.digest_hex()
    }

    #[getter]
    fn run_seed(&self) -> u64 {
        self.inner.run_seed
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn m_samples_per_node(&self) -> usize {
        self.inner.m_samples_per_node
    }

    #[getter]
    fn n_final_samples(&self) -> usize {
        self.inner.n_final_samples
    }

    #[getter]
    fn max_depth(&self) -> usize {
        self.inner.max_depth
    }

    #[getter]
    fn generality_schedule(&self) -> Vec<f64> {
        self.inner.generality_schedule.clone()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Config(digest={})", self.inner.digest_hex())
    }
}

/// A canonicalized natural-language description.
#[pyclass(name = "Description", module = "domain_bridge", frozen, eq, hash, from_py_object)]
#[derive(Clone, PartialEq, Eq, Hash)]
struct PyDescription {
    inner: Description,
}

#[pymethods]
impl PyDescription {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(PyDescription { inner: Description::new(text).py()? })
    }

    #[getter]
    fn word_count(&self) -> usize {
        self.inner.word_count()
    }

    fn __str__(&self) -> &str {
        self.inner.as_str()
    }

    fn __repr__(&self) -> String {
        format!("Description({:?})", self.inner.as_str())
    }
}

#[derive(FromPyObject)]
enum DescriptionArg {
    Wrapped(PyDescription),
    Text(String),
}

impl DescriptionArg {
    fn get(self) -> PyResult<Description> {
        match self {
            DescriptionArg::Wrapped(d) => Ok(d.inner),
            DescriptionArg::Text(t) => Description::new(t).py(),
        }
    }
}

/// `V = relevance - lambda * penalty` with its two terms.
#[pyclass(name = "ObjectiveValue", module = "domain_bridge", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyObjective {
    relevance: f64,
    penalty: f64,
    lambda_: f64,
    value: f64,
}

impl From<ObjectiveValue> for PyObjective {
    fn from(v: ObjectiveValue) -> Self {
        PyObjective { relevance: v.relevance, penalty: v.penalty, lambda_: v.lambda, value: v.value }
    }
}

#[pymethods]
impl PyObjective {
    fn __repr__(&self) -> String {
        format!("ObjectiveValue(value={:.6}, relevance={:.6}, penalty={:.6})", self.value, self.relevance, self.penalty)
    }
}

/// Persisted search state.
#[pyclass(name = "SearchTree", module = "domain_bridge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTree {
    inner: SearchTree,
}

#[pymethods]
impl PyTree {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyTree { inner: SearchTree::from_bytes(text.as_bytes()).py()? })
    }

    fn to_json(&self) -> PyResult<String> {
        let bytes = self.inner.to_bytes().py()?;
        String::from_utf8(bytes).map_err(|e| DomainBridgeError::new_err(e.to_string()))
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py()
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.iteration
    }

    #[getter]
    fn frontier(&self) -> Vec<u64> {
        self.inner.frontier.clone()
    }

    #[getter]
    fn is_complete(&self) -> bool {
        self.inner.is_complete()
    }

    fn __len__(&self) -> usize {
        self.inner.nodes.len()
    }

    /// `(id, parent_id, depth, description, k, m, status)` per node.
    #[allow(clippy::type_complexity)]
    fn nodes(&self) -> Vec<(u64, Option<u64>, usize, String, Option<usize>, Option<usize>, &'static str)> {
        self.inner
            .nodes
            .values()
            .map(|n| {
                (
                    n.id,
                    n.parent_id,
                    n.depth,
                    n.description.as_str().to_string(),
                    n.relevance.map(|r| r.k),
                    n.relevance.map(|r| r.m),
                    n.status.name(),
                )
            })
            .collect()
    }
}

#[pyclass(name = "SearchReport", module = "domain_bridge", frozen)]
struct PyReport {
    inner: SearchReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn best_description(&self) -> Option<String> {
        self.inner.best_description.as_ref().map(|d| d.as_str().to_string())
    }

    #[getter]
    fn best_objective(&self) -> Option<PyObjective> {
        self.inner.best_objective.map(Into::into)
    }

    #[getter]
    fn partial(&self) -> bool {
        self.inner.partial
    }

    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn tree(&self) -> PyTree {
        PyTree { inner: self.inner.tree.clone() }
    }

    fn candidates(&self) -> Vec<(String, PyObjective)> {
        self.inner
            .candidates
            .iter()
            .map(|Candidate { description, objective, .. }| (description.as_str().to_string(), (*objective).into()))
            .collect()
    }

    fn budget_spent(&self) -> Vec<(String, u64)> {
        self.inner.budget_spent.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }
}

/// Seeded synthetic universe with all seven oracles.
#[pyclass(name = "Universe", module = "domain_bridge", frozen)]
struct PyUniverse {
    spec: UniverseSpec,
    inner: Arc<Universe>,
}

impl PyUniverse {
    fn from_spec(spec: UniverseSpec) -> PyResult<Self> {
        let inner = Arc::new(Universe::build(spec.clone()).py()?);
        Ok(PyUniverse { spec, inner })
    }

    fn label(&self, class: usize) -> PyResult<ClassLabel> {
        if class >= self.spec.classes.len() {
            return Err(DomainBridgeError::new_err(format!("class {class} does not exist")));
        }
        Ok(ClassLabel(class))
    }
}

#[pymethods]
impl PyUniverse {
    #[staticmethod]
    #[pyo3(signature = (seed, vocab_size, dim, max_tokens, class_sizes, accept_threshold = 0.85))]
    fn generate(
        seed: u64,
        vocab_size: usize,
        dim: usize,
        max_tokens: usize,
        class_sizes: Vec<usize>,
        accept_threshold: f64,
    ) -> PyResult<Self> {
        Self::from_spec(UniverseSpec::generate(seed, vocab_size, dim, max_tokens, &class_sizes, accept_threshold).py()?)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::from_spec(UniverseSpec::from_json(text.as_bytes()).py()?)
    }

    fn to_json(&self) -> PyResult<String> {
        self.spec.to_json().py()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.spec.classes.len()
    }

    fn token_names(&self) -> Vec<String> {
        self.inner.token_names().to_vec()
    }

    fn class_description(&self, class: usize) -> PyResult<String> {
        let label = self.label(class)?;
        Ok(self.inner.class_description(label).expect("checked").as_str().to_string())
    }

    /// Runs a full search for `class` starting from `initial`.
    #[pyo3(signature = (initial, class_, config))]
    fn search(&self, py: Python<'_>, initial: Vec<DescriptionArg>, class_: usize, config: &PyConfig) -> PyResult<PyReport> {
        let initial = initial.into_iter().map(DescriptionArg::get).collect::<PyResult<Vec<_>>>()?;
        let label = self.label(class_)?;
        let suite = Universe::shared_suite(self.inner.clone());
        let cfg = config.inner.clone();
        let inner = py.detach(|| domain_bridge::run_search(&initial, label, &cfg, &suite)).py()?;
        Ok(PyReport { inner })
    }

    /// Continues a persisted tree to completion.
    #[pyo3(signature = (tree, class_, config))]
    fn resume(&self, py: Python<'_>, tree: &PyTree, class_: usize, config: &PyConfig) -> PyResult<PyReport> {
        let label = self.label(class_)?;
        let suite = Universe::shared_suite(self.inner.clone());
        let (tree, cfg) = (tree.inner.clone(), config.inner.clone());
        let inner = py.detach(|| domain_bridge::resume_search(tree, label, &cfg, &suite)).py()?;
        Ok(PyReport { inner })
    }

    /// Objective of one description. `explicit_seeds` evaluates both terms
    /// on the canonical explicit seed set instead of derived streams.
    #[pyo3(signature = (description, class_, config, explicit_seeds = false))]
    fn objective(
        &self,
        description: DescriptionArg,
        class_: usize,
        config: &PyConfig,
        explicit_seeds: bool,
    ) -> PyResult<PyObjective> {
        let description = description.get()?;
        let label = self.label(class_)?;
        let cfg = &config.inner;
        let plan = if explicit_seeds {
            SeedPlan::Explicit(explicit_seed_set(cfg.run_seed, cfg.n_final_samples))
        } else {
            SeedPlan::Derived { run_seed: cfg.run_seed }
        };
        let suite = Universe::shared_suite(self.inner.clone());
        Ok(domain_bridge::objective_value(&description, label, cfg, &suite, &plan).py()?.into())
    }

    /// Exhaustive optimum over every token set, on the explicit seed set.
    #[pyo3(signature = (class_, config))]
    fn brute_force(&self, py: Python<'_>, class_: usize, config: &PyConfig) -> PyResult<(String, PyObjective)> {
        let label = self.label(class_)?;
        let cfg = &config.inner;
        let seeds = explicit_seed_set(cfg.run_seed, cfg.n_final_samples);
        let (d, v) = py.detach(|| brute_force_optimum(&self.spec, label, cfg, &seeds)).py()?;
        Ok((d.as_str().to_string(), v.into()))
    }
}

#[pyfunction]
fn canonicalize(text: &str) -> String {
    domain_bridge::types::canonicalize(text)
}

#[pyfunction(name = "explicit_seed_set")]
fn py_explicit_seed_set(run_seed: u64, n: usize) -> Vec<u64> {
    explicit_seed_set(run_seed, n)
}

#[pymodule]
#[pyo3(name = "domain_bridge")]
fn domain_bridge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDescription>()?;
    m.add_class::<PyObjective>()?;
    m.add_class::<PyTree>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyUniverse>()?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(py_explicit_seed_set, m)?)?;
    let py = m.py();
    m.add("DomainBridgeError", py.get_type::<DomainBridgeError>())?;
    m.add("BudgetExceededError", py.get_type::<BudgetExceededError>())?;
    m.add("OracleError", py.get_type::<OracleError>())?;
    m.add("ConfigMismatchError", py.get_type::<ConfigMismatchError>())?;
    Ok(())
}
