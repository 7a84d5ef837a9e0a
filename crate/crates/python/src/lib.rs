//! Python bindings. Tables cross the boundary column by column: a dict
//! mapping each column name to a list of floats (numerical) or strings
//! (categorical), in domain order.

use dpsynth::domain::{load_domain, ColumnKind, Domain};
use dpsynth::metrics::utility_report_with_bins;
use dpsynth::rng::seeded;
use dpsynth::select::ModelKind;
use dpsynth::synth::{fit, fit_private, pretrain_public, Condition, FittedSynthesizer, SynthesizerConfig};
use dpsynth::table::{Column, MixedTable};
use dpsynth::Error;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

create_exception!(dpsynth, DpsynthError, PyException);
create_exception!(dpsynth, BudgetError, DpsynthError);
create_exception!(dpsynth, InfeasibleConditionError, DpsynthError);
create_exception!(dpsynth, ModelLoadError, DpsynthError);

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        e if e.is_budget() => BudgetError::new_err(msg),
        Error::InfeasibleCondition(_) => InfeasibleConditionError::new_err(msg),
        Error::Load { .. } => ModelLoadError::new_err(msg),
        _ => DpsynthError::new_err(msg),
    }
}

trait OrPy<T> {
    fn or_py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for dpsynth::Result<T> {
    fn or_py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Column types and bounds for a dataset, parsed from the JSON domain format.
#[pyclass(name = "Domain", module = "dpsynth", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDomain {
    inner: Domain,
}

#[pymethods]
impl PyDomain {
    #[staticmethod]
    fn from_json(document: &str) -> PyResult<Self> {
        Ok(Self { inner: load_domain(document).or_py()? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| DpsynthError::new_err(format!("{path}: {e}")))?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json().to_string()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.columns.iter().map(|c| c.name.clone()).collect()
    }

    fn __repr__(&self) -> String {
        format!("Domain({})", self.names().join(", "))
    }
}

fn table_from_py(data: &Bound<'_, PyDict>, domain: &Domain) -> PyResult<MixedTable> {
    let mut names = Vec::with_capacity(domain.columns.len());
    let mut columns = Vec::with_capacity(domain.columns.len());
    for spec in &domain.columns {
        let values = data
            .get_item(&spec.name)?
            .ok_or_else(|| DpsynthError::new_err(format!("missing column `{}`", spec.name)))?;
        let column = match spec.kind {
            ColumnKind::Categorical { .. } => Column::Categorical(values.extract()?),
            ColumnKind::Numerical { .. } => Column::Numerical(values.extract()?),
        };
        names.push(spec.name.clone());
        columns.push(column);
    }
    if data.len() != names.len() {
        return Err(DpsynthError::new_err(format!("expected columns {names:?}, got {} columns", data.len())));
    }
    let table = MixedTable::new(names, columns).or_py()?;
    table.check_schema(domain).or_py()?;
    Ok(table)
}

fn table_to_py<'py>(py: Python<'py>, table: &MixedTable) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    for (name, col) in table.names().iter().zip(table.columns()) {
        match col {
            Column::Categorical(v) => out.set_item(name, PyList::new(py, v)?)?,
            Column::Numerical(v) => out.set_item(name, PyList::new(py, v)?)?,
        }
    }
    Ok(out)
}

/// Reads a CSV file into a column dict, typed by `domain`.
#[pyfunction]
fn read_csv<'py>(py: Python<'py>, path: &str, domain: &PyDomain) -> PyResult<Bound<'py, PyDict>> {
    let table = MixedTable::read_csv_path(path, &domain.inner).or_py()?;
    table_to_py(py, &table)
}

/// Renders a column dict as CSV text in the same format the CLI writes.
#[pyfunction]
fn to_csv(data: &Bound<'_, PyDict>, domain: &PyDomain) -> PyResult<String> {
    table_from_py(data, &domain.inner)?.to_csv_string().or_py()
}

/// A fitted synthesizer. Immutable; `generate` may be called from several
/// threads with their own seeds.
#[pyclass(name = "Synthesizer", module = "dpsynth", frozen)]
struct PySynthesizer {
    inner: FittedSynthesizer,
}

#[pymethods]
impl PySynthesizer {
    #[pyo3(signature = (rows, conditions = Vec::new(), seed = None))]
    fn generate<'py>(&self, py: Python<'py>, rows: usize, conditions: Vec<String>, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
        let domain = self.inner.domain();
        let conditions = conditions.iter().map(|c| Condition::parse(c, domain)).collect::<dpsynth::Result<Vec<_>>>().or_py()?;
        let seed = seed.unwrap_or_else(rand::random);
        let table = py.detach(|| self.inner.generate(rows, &conditions, &mut seeded(seed))).or_py()?;
        table_to_py(py, &table)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).or_py()
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: FittedSynthesizer::load(path).or_py()? })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.to_bytes().or_py()?))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: FittedSynthesizer::from_bytes(data).or_py()? })
    }

    #[getter]
    fn domain(&self) -> PyDomain {
        PyDomain { inner: self.inner.domain().clone() }
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.config().model.to_string()
    }

    #[getter]
    fn epsilon_spent(&self) -> PyResult<f64> {
        self.inner.epsilon_spent().or_py()
    }

    /// `(label, rho)` for every charge made while fitting.
    #[getter]
    fn ledger(&self) -> Vec<(String, f64)> {
        self.inner.ledger().log().iter().map(|e| (e.label.clone(), e.rho)).collect()
    }

    /// Measured cliques as lists of column names.
    #[getter]
    fn cliques(&self) -> Vec<Vec<String>> {
        let names = self.inner.preprocessor().names();
        self.inner.cliques().iter().map(|c| c.attrs().iter().map(|&a| names[a].clone()).collect()).collect()
    }

    #[getter]
    fn model_size_bytes(&self) -> PyResult<u64> {
        self.inner.model_size_bytes().or_py()
    }

    fn __repr__(&self) -> String {
        format!("Synthesizer(model={}, cliques={})", self.model(), self.inner.cliques().len())
    }
}

/// Fits a synthesizer on `data` under (epsilon, delta)-DP. Rows from
/// `public_data` shape preprocessing and selection at no privacy cost.
#[pyfunction(name = "fit")]
#[pyo3(signature = (
    data, domain, model = "aim", epsilon = 1.0, delta = 1e-5, proc_epsilon = None, degree = 2,
    size_cap_mb = 80.0, discretization = "privtree", bins = 20, seed = None, public_data = None, fit_iters = None,
))]
#[allow(clippy::too_many_arguments)]
fn fit_synthesizer(
    py: Python<'_>,
    data: &Bound<'_, PyDict>,
    domain: &PyDomain,
    model: &str,
    epsilon: f64,
    delta: f64,
    proc_epsilon: Option<f64>,
    degree: usize,
    size_cap_mb: f64,
    discretization: &str,
    bins: usize,
    seed: Option<u64>,
    public_data: Option<&Bound<'_, PyDict>>,
    fit_iters: Option<usize>,
) -> PyResult<PySynthesizer> {
    let domain = &domain.inner;
    let seed = seed.unwrap_or_else(rand::random);
    let mut config = SynthesizerConfig {
        model: model.parse::<ModelKind>().or_py()?,
        epsilon,
        delta,
        epsilon_proc: proc_epsilon,
        degree,
        size_cap_mb,
        discretization: discretization.parse().or_py()?,
        bins,
        seed: Some(seed),
        ..Default::default()
    };
    if let Some(iters) = fit_iters {
        config.fit_iters = iters;
    }
    let data = table_from_py(data, domain)?;
    let public = public_data.map(|p| table_from_py(p, domain)).transpose()?;
    let fitted = py.detach(|| {
        let mut rng = seeded(seed);
        match &public {
            Some(public) => {
                let config = SynthesizerConfig { epsilon_proc: Some(0.0), ..config };
                let state = pretrain_public(&config, public, domain, &mut rng)?;
                fit_private(&state, &data, &mut rng)
            }
            None => fit(&config, &data, domain, &mut rng),
        }
    });
    Ok(PySynthesizer { inner: fitted.or_py()? })
}

/// Similarity and distinguishability scores of `synth` against `real`.
#[pyfunction]
#[pyo3(signature = (real, synth, domain, bins = 20, seed = 0))]
fn evaluate<'py>(
    py: Python<'py>,
    real: &Bound<'py, PyDict>,
    synth: &Bound<'py, PyDict>,
    domain: &PyDomain,
    bins: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let real = table_from_py(real, &domain.inner)?;
    let synth = table_from_py(synth, &domain.inner)?;
    let r = py.detach(|| utility_report_with_bins(&real, &synth, &domain.inner, bins, &mut seeded(seed))).or_py()?;
    let out = PyDict::new(py);
    out.set_item("similarity_1way", r.similarity_1way)?;
    out.set_item("similarity_2way", r.similarity_2way)?;
    out.set_item("distinguishability", r.distinguishability)?;
    out.set_item("mean", r.mean)?;
    Ok(out)
}

#[pymodule(name = "dpsynth")]
fn dpsynth_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add_class::<PyDomain>()?;
    m.add_class::<PySynthesizer>()?;
    m.add_function(wrap_pyfunction!(fit_synthesizer, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(read_csv, m)?)?;
    m.add_function(wrap_pyfunction!(to_csv, m)?)?;
    m.add("DpsynthError", py.get_type::<DpsynthError>())?;
    m.add("BudgetError", py.get_type::<BudgetError>())?;
    m.add("InfeasibleConditionError", py.get_type::<InfeasibleConditionError>())?;
    m.add("ModelLoadError", py.get_type::<ModelLoadError>())?;
    Ok(())
}
