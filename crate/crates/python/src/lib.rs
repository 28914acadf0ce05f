//! Python bindings for `conformal-shift`.

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use conformal_shift::conformal::{self, CoverageReport, PredictorSpec, Threshold};
use conformal_shift::qtc::{self, QtcEstimate, QtcMethod};
use conformal_shift::regression::{self, Extractor, MlpRegressor, TrainConfig};
use conformal_shift::scores::{self, Dataset, Format, LabeledDataset, ScoreMatrix, UnlabeledDataset};
use conformal_shift::synthetic::SyntheticFamily;
use conformal_shift::toymodel::{self, ToyClassifier, ToyModelParams, TheoremSetup, TheoremTrialReport};
use conformal_shift::Error;

create_exception!(cshift, SaturatedError, PyRuntimeError);
create_exception!(cshift, NumericError, PyRuntimeError);
create_exception!(cshift, PreconditionError, PyRuntimeError);

fn to_py(err: Error) -> PyErr {
    let msg = err.to_string();
    match err {
        Error::Io { .. } => PyOSError::new_err(msg),
        Error::Saturated(_) => SaturatedError::new_err(msg),
        Error::Numeric(_) => NumericError::new_err(msg),
        Error::Precondition(_) => PreconditionError::new_err(msg),
        Error::Parse(_) | Error::InvalidData(_) | Error::InvalidArgument(_) | Error::ClassMismatch { .. } => {
            PyValueError::new_err(msg)
        }
    }
}

trait OrPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> OrPy<T> for conformal_shift::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<ScoreMatrix> {
    ScoreMatrix::from_rows(&rows).py_err()
}

fn rows_of(m: &ScoreMatrix) -> Vec<Vec<f64>> {
    m.rows().map(<[f64]>::to_vec).collect()
}

/// Scores with one class label per row.
#[pyclass(name = "LabeledDataset", module = "cshift", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLabeled {
    inner: LabeledDataset,
}

#[pymethods]
impl PyLabeled {
    #[new]
    fn new(scores: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Self> {
        Ok(Self { inner: LabeledDataset::new(matrix(scores)?, labels).py_err()? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    fn scores(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.scores())
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    fn unlabeled(&self) -> PyUnlabeled {
        PyUnlabeled { inner: self.inner.unlabeled() }
    }

    /// Random partition into `(first, rest)` with `ceil(fraction * n)` rows first.
    fn split(&self, fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = scores::split(&self.inner, fraction, seed).py_err()?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        scores::save_dataset(&Dataset::Labeled(self.inner.clone()), path, Format::from_path(path.as_ref())).py_err()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("LabeledDataset(n={}, n_classes={})", self.inner.n(), self.inner.n_classes())
    }
}

/// Scores without labels.
#[pyclass(name = "UnlabeledDataset", module = "cshift", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyUnlabeled {
    inner: UnlabeledDataset,
}

#[pymethods]
impl PyUnlabeled {
    #[new]
    fn new(scores: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self { inner: UnlabeledDataset::new(matrix(scores)?) })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    fn scores(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.scores())
    }

    fn save(&self, path: &str) -> PyResult<()> {
        scores::save_dataset(&Dataset::Unlabeled(self.inner.clone()), path, Format::from_path(path.as_ref())).py_err()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("UnlabeledDataset(n={}, n_classes={})", self.inner.n(), self.inner.n_classes())
    }
}

/// Either dataset kind, for operations that only read scores.
fn any_scores(obj: &Bound<'_, PyAny>) -> PyResult<ScoreMatrix> {
    if let Ok(d) = obj.cast::<PyLabeled>() {
        return Ok(d.get().inner.scores().clone());
    }
    if let Ok(d) = obj.cast::<PyUnlabeled>() {
        return Ok(d.get().inner.scores().clone());
    }
    Err(PyValueError::new_err("expected a LabeledDataset or UnlabeledDataset"))
}

/// A conformal predictor: `Predictor.tps()`, `Predictor.aps()` or `Predictor.raps(lam, k_reg)`.
#[pyclass(name = "Predictor", module = "cshift", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPredictor {
    inner: PredictorSpec,
}

#[pymethods]
impl PyPredictor {
    #[staticmethod]
    fn tps() -> Self {
        Self { inner: PredictorSpec::Tps }
    }

    #[staticmethod]
    fn aps() -> Self {
        Self { inner: PredictorSpec::Aps }
    }

    #[staticmethod]
    #[pyo3(signature = (lam=0.1, k_reg=2))]
    fn raps(lam: f64, k_reg: usize) -> PyResult<Self> {
        Ok(Self { inner: PredictorSpec::raps(lam, k_reg).py_err()? })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn max_tau(&self, n_classes: usize) -> f64 {
        self.inner.max_tau(n_classes)
    }

    #[pyo3(signature = (row, label, u=0.0))]
    fn conformity_score(&self, row: Vec<f64>, label: usize, u: f64) -> PyResult<f64> {
        if label >= row.len() {
            return Err(PyValueError::new_err("label out of range"));
        }
        Ok(conformal::conformity_score(&self.inner, &row, label, u))
    }

    #[pyo3(signature = (row, tau, u=0.0))]
    fn prediction_set(&self, row: Vec<f64>, tau: f64, u: f64) -> Vec<usize> {
        conformal::prediction_set(&self.inner, &row, u, tau)
    }

    fn __repr__(&self) -> String {
        format!("Predictor({})", self.inner)
    }
}

#[pyclass(name = "Threshold", module = "cshift", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct PyThreshold {
    tau: f64,
    alpha: f64,
    source_tag: String,
    saturated: bool,
}

#[pymethods]
impl PyThreshold {
    #[new]
    #[pyo3(signature = (tau, alpha, source_tag="manual".to_string(), saturated=false))]
    fn new(tau: f64, alpha: f64, source_tag: String, saturated: bool) -> Self {
        Self { tau, alpha, source_tag, saturated }
    }

    fn __repr__(&self) -> String {
        format!(
            "Threshold(tau={}, alpha={}, source_tag={:?}, saturated={})",
            self.tau, self.alpha, self.source_tag, self.saturated
        )
    }
}

impl From<Threshold> for PyThreshold {
    fn from(t: Threshold) -> Self {
        Self { tau: t.tau, alpha: t.alpha, source_tag: t.source_tag, saturated: t.saturated }
    }
}

impl From<&PyThreshold> for Threshold {
    fn from(t: &PyThreshold) -> Self {
        Threshold { tau: t.tau, alpha: t.alpha, source_tag: t.source_tag.clone(), saturated: t.saturated }
    }
}

#[pyclass(name = "CoverageReport", module = "cshift", frozen, get_all)]
struct PyReport {
    coverage: f64,
    avg_set_size: f64,
    median_set_size: f64,
    size_histogram: Vec<usize>,
    n_eval: usize,
}

#[pymethods]
impl PyReport {
    fn __repr__(&self) -> String {
        format!(
            "CoverageReport(coverage={}, avg_set_size={}, n_eval={})",
            self.coverage, self.avg_set_size, self.n_eval
        )
    }
}

impl From<CoverageReport> for PyReport {
    fn from(r: CoverageReport) -> Self {
        Self {
            coverage: r.coverage,
            avg_set_size: r.avg_set_size,
            median_set_size: r.median_set_size,
            size_histogram: r.size_histogram,
            n_eval: r.n_eval,
        }
    }
}

#[pyclass(name = "QtcEstimate", module = "cshift", frozen, get_all)]
struct PyEstimate {
    method: String,
    q_threshold: f64,
    value: f64,
    alpha: f64,
    warnings: Vec<String>,
}

#[pymethods]
impl PyEstimate {
    fn __repr__(&self) -> String {
        format!("QtcEstimate(method={:?}, q={}, value={})", self.method, self.q_threshold, self.value)
    }
}

impl From<QtcEstimate> for PyEstimate {
    fn from(e: QtcEstimate) -> Self {
        Self {
            method: e.method.name().to_string(),
            q_threshold: e.q_threshold,
            value: e.value,
            alpha: e.alpha,
            warnings: e.warnings,
        }
    }
}

/// Loads a `.csv` or `.bin` score file as a labeled or unlabeled dataset.
#[pyfunction]
fn load_dataset(py: Python<'_>, path: &str) -> PyResult<Py<PyAny>> {
    match scores::load_dataset(path, Format::from_path(path.as_ref())).py_err()? {
        Dataset::Labeled(d) => Ok(Py::new(py, PyLabeled { inner: d })?.into_any()),
        Dataset::Unlabeled(d) => Ok(Py::new(py, PyUnlabeled { inner: d })?.into_any()),
    }
}

#[pyfunction]
#[pyo3(signature = (predictor, cal, alpha, seed=0))]
fn calibrate(predictor: &PyPredictor, cal: &PyLabeled, alpha: f64, seed: u64) -> PyResult<PyThreshold> {
    Ok(conformal::calibrate(&predictor.inner, &cal.inner, alpha, seed).py_err()?.into())
}

#[pyfunction]
#[pyo3(signature = (predictor, threshold, test, seed=0))]
fn evaluate(predictor: &PyPredictor, threshold: &PyThreshold, test: &PyLabeled, seed: u64) -> PyResult<PyReport> {
    Ok(conformal::evaluate(&predictor.inner, &threshold.into(), &test.inner, seed).py_err()?.into())
}

/// Prediction sets of every row at `tau`, with the per-row `u` drawn from `seed`.
#[pyfunction]
#[pyo3(signature = (predictor, data, tau, seed=0))]
fn prediction_sets(predictor: &PyPredictor, data: &Bound<'_, PyAny>, tau: f64, seed: u64) -> PyResult<Vec<Vec<usize>>> {
    let m = any_scores(data)?;
    Ok(m.rows()
        .enumerate()
        .map(|(i, row)| {
            conformal::prediction_set(&predictor.inner, row, conformal::smoothing_u(&predictor.inner, seed, i), tau)
        })
        .collect())
}

#[pyfunction]
fn top_confidences(data: &Bound<'_, PyAny>) -> PyResult<Vec<f64>> {
    Ok(qtc::top_confidences(&any_scores(data)?))
}

#[pyfunction]
fn estimate_beta_qtc(source: &Bound<'_, PyAny>, target: &Bound<'_, PyAny>, alpha: f64) -> PyResult<PyEstimate> {
    Ok(qtc::estimate_beta_qtc(&any_scores(source)?, &any_scores(target)?, alpha).py_err()?.into())
}

#[pyfunction]
fn estimate_beta_qtc_sc(source: &Bound<'_, PyAny>, target: &Bound<'_, PyAny>, alpha: f64) -> PyResult<PyEstimate> {
    Ok(qtc::estimate_beta_qtc_sc(&any_scores(source)?, &any_scores(target)?, alpha).py_err()?.into())
}

#[pyfunction]
#[pyo3(signature = (predictor, source, target, alpha, seed=0))]
fn estimate_tau_qtc_st(
    predictor: &PyPredictor,
    source: &PyLabeled,
    target: &Bound<'_, PyAny>,
    alpha: f64,
    seed: u64,
) -> PyResult<PyEstimate> {
    Ok(qtc::estimate_tau_qtc_st(&predictor.inner, &source.inner, &any_scores(target)?, alpha, seed)
        .py_err()?
        .into())
}

/// Returns `(threshold, estimate)` for the target using only its scores.
#[pyfunction]
#[pyo3(signature = (predictor, source, target, alpha, method="qtc", seed=0))]
fn recalibrate(
    predictor: &PyPredictor,
    source: &PyLabeled,
    target: &Bound<'_, PyAny>,
    alpha: f64,
    method: &str,
    seed: u64,
) -> PyResult<(PyThreshold, PyEstimate)> {
    let method: QtcMethod = method.parse().py_err()?;
    let r = qtc::recalibrate(&predictor.inner, &source.inner, &any_scores(target)?, alpha, method, seed).py_err()?;
    Ok((r.threshold.into(), r.estimate.into()))
}

/// Feature vector of `data` for `extractor` (acr, dcr, chr, chr-minus, pcr).
#[pyfunction]
#[pyo3(signature = (data, extractor, bins=10, source=None))]
fn extract_features(
    data: &Bound<'_, PyAny>,
    extractor: &str,
    bins: usize,
    source: Option<&Bound<'_, PyAny>>,
) -> PyResult<Vec<f64>> {
    let extractor: Extractor = extractor.parse().py_err()?;
    let source = source.map(any_scores).transpose()?;
    let (f, _) = regression::extract_features(&any_scores(data)?, extractor, bins, source.as_ref()).py_err()?;
    Ok(f.values)
}

/// A trained threshold regressor.
#[pyclass(name = "Regressor", module = "cshift", frozen)]
struct PyRegressor {
    inner: MlpRegressor,
    source: ScoreMatrix,
}

#[pymethods]
impl PyRegressor {
    #[getter]
    fn final_loss(&self) -> f64 {
        self.inner.final_loss
    }

    #[getter]
    fn extractor(&self) -> &'static str {
        self.inner.extractor.name()
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.mlp.layer_sizes()
    }

    /// Predicted threshold for an unlabeled target.
    fn predict_tau(&self, target: &Bound<'_, PyAny>) -> PyResult<f64> {
        let m = any_scores(target)?;
        let (f, _) = regression::extract_features(&m, self.inner.extractor, self.inner.bins, Some(&self.source))
            .py_err()?;
        self.inner.predict_tau(&f, None).py_err()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).py_err()
    }
}

#[pyfunction]
#[pyo3(signature = (predictor, source, alpha, extractor="chr", shifts=90, bins=10, epochs=5000, learning_rate=1e-3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train_baseline(
    py: Python<'_>,
    predictor: &PyPredictor,
    source: &PyLabeled,
    alpha: f64,
    extractor: &str,
    shifts: usize,
    bins: usize,
    epochs: usize,
    learning_rate: f64,
    seed: u64,
) -> PyResult<PyRegressor> {
    let extractor: Extractor = extractor.parse().py_err()?;
    let spec = predictor.inner;
    let src = &source.inner;
    let model = py
        .detach(|| {
            let corpus = regression::build_corpus(src, &spec, alpha, shifts, extractor, bins, seed)?;
            let config = TrainConfig { epochs, learning_rate, seed, ..Default::default() };
            regression::train(&corpus, &config).map(|(m, _)| m)
        })
        .py_err()?;
    Ok(PyRegressor { inner: model, source: src.scores().clone() })
}

/// Synthetic labeled scores; larger `log_temperature` means a harder shift.
#[pyfunction]
#[pyo3(signature = (n, log_temperature=0.0, seed=0, n_classes=10, signal=5.0, sharpness=2.0))]
fn synthetic(n: usize, log_temperature: f64, seed: u64, n_classes: usize, signal: f64, sharpness: f64) -> PyResult<PyLabeled> {
    if n == 0 || n_classes < 2 {
        return Err(PyValueError::new_err("need n >= 1 and n_classes >= 2"));
    }
    let family = SyntheticFamily { n_classes, signal, sharpness };
    Ok(PyLabeled { inner: family.generate(n, log_temperature, seed) })
}

fn toy(gamma: f64, c: f64, p: f64) -> PyResult<ToyModelParams> {
    ToyModelParams::new(gamma, c, p).py_err()
}

/// Labeled two-class dataset from the spurious-correlation model.
#[pyfunction]
#[pyo3(signature = (n, p, w_inv=1.0, w_sp=0.5, gamma=0.05, c=1.0, seed=0))]
fn toy_dataset(n: usize, p: f64, w_inv: f64, w_sp: f64, gamma: f64, c: f64, seed: u64) -> PyResult<PyLabeled> {
    let w = ToyClassifier::new(w_inv, w_sp).py_err()?;
    let samples = toymodel::sample(&toy(gamma, c, p)?, n, seed);
    Ok(PyLabeled { inner: toymodel::to_dataset(&samples, &w) })
}

/// Monte Carlo oracle: dict with `tau_target`, `beta` and both error rates.
#[pyfunction]
#[pyo3(signature = (p_source, p_target, alpha, w_inv=1.0, w_sp=0.5, gamma=0.05, c=1.0, n_mc=toymodel::DEFAULT_N_MC, seed=0))]
#[allow(clippy::too_many_arguments)]
fn toy_oracle_beta<'py>(
    py: Python<'py>,
    p_source: f64,
    p_target: f64,
    alpha: f64,
    w_inv: f64,
    w_sp: f64,
    gamma: f64,
    c: f64,
    n_mc: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let (src, tgt) = (toy(gamma, c, p_source)?, toy(gamma, c, p_target)?);
    let w = ToyClassifier::new(w_inv, w_sp).py_err()?;
    let o = py.detach(|| toymodel::oracle_beta(&src, &tgt, &w, alpha, n_mc, seed)).py_err()?;
    let d = PyDict::new(py);
    d.set_item("tau_target", o.tau_target)?;
    d.set_item("beta", o.beta)?;
    d.set_item("error_rate_source", o.error_rate_source)?;
    d.set_item("error_rate_target", o.error_rate_target)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &TheoremTrialReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("trial_id", r.trial_id)?;
    d.set_item("n", r.n)?;
    d.set_item("beta_true", r.beta_true)?;
    d.set_item("beta_qtc", r.beta_qtc)?;
    d.set_item("bound", r.bound)?;
    d.set_item("violated", r.violated)?;
    d.set_item("coverage", r.coverage)?;
    Ok(d)
}

/// Runs bound-verification trials; returns one dict per trial.
#[pyfunction]
#[pyo3(signature = (trials, n, alpha=0.02, delta=0.1, p_source=0.9, p_target=0.7, w_inv=1.0, w_sp=0.5, gamma=0.05, c=1.0, n_mc=toymodel::DEFAULT_N_MC, seed=0))]
#[allow(clippy::too_many_arguments)]
fn toy_run_trials<'py>(
    py: Python<'py>,
    trials: usize,
    n: usize,
    alpha: f64,
    delta: f64,
    p_source: f64,
    p_target: f64,
    w_inv: f64,
    w_sp: f64,
    gamma: f64,
    c: f64,
    n_mc: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (src, tgt) = (toy(gamma, c, p_source)?, toy(gamma, c, p_target)?);
    let w = ToyClassifier::new(w_inv, w_sp).py_err()?;
    let reports = py
        .detach(|| {
            let setup = TheoremSetup::new(src, tgt, w, alpha, n_mc, seed)?;
            setup.run_trials(trials, n, delta, seed)
        })
        .py_err()?;
    reports.iter().map(|r| report_dict(py, r)).collect()
}

#[pymodule]
fn cshift(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLabeled>()?;
    m.add_class::<PyUnlabeled>()?;
    m.add_class::<PyPredictor>()?;
    m.add_class::<PyThreshold>()?;
    m.add_class::<PyReport>()?;
    m.add_class::<PyEstimate>()?;
    m.add_class::<PyRegressor>()?;
    m.add("SaturatedError", m.py().get_type::<SaturatedError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    m.add("PreconditionError", m.py().get_type::<PreconditionError>())?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(prediction_sets, m)?)?;
    m.add_function(wrap_pyfunction!(top_confidences, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_beta_qtc, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_beta_qtc_sc, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_tau_qtc_st, m)?)?;
    m.add_function(wrap_pyfunction!(recalibrate, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(train_baseline, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(toy_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(toy_oracle_beta, m)?)?;
    m.add_function(wrap_pyfunction!(toy_run_trials, m)?)?;
    Ok(())
}
