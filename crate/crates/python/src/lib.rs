//! Python bindings: datasets, candidate ensembles, fitting, evidence and
//! predictive summaries.

use std::sync::Arc;

use pyo3::exceptions::{PyArithmeticError, PyKeyError, PyValueError};
use pyo3::prelude::*;

use vbma::data::{self, Dataset, LatticeSpec, Preparation, Rows, Schema};
use vbma::evidence::{evidence_to_posterior, mc_log_evidence, zellner_log_evidence};
use vbma::models::{subset_from_mask, Model, ZellnerModel};
use vbma::optim::OptimizerConfig;
use vbma::predict::{self, BmaPosterior, ParamSampler};
use vbma::vbma::{run, Ensemble, EnsembleState, VbmaConfig};

fn to_py(e: vbma::Error) -> PyErr {
    match e {
        e if e.is_numerical() => PyArithmeticError::new_err(e.to_string()),
        vbma::Error::Lookup(m) => PyKeyError::new_err(m),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn rows_of(which: &str) -> PyResult<Rows> {
    match which {
        "all" => Ok(Rows::All),
        "train" => Ok(Rows::Train),
        "test" => Ok(Rows::Test),
        other => Err(PyValueError::new_err(format!("rows must be all, train or test, got `{other}`"))),
    }
}

/// Named predictor columns plus a response, with a train/test split.
#[pyclass(name = "Dataset", module = "vbma_py", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    /// Crime data, logged and centered.
    #[staticmethod]
    #[pyo3(signature = (split=None, seed=0))]
    fn crime(split: Option<f64>, seed: u64) -> PyResult<Self> {
        let base = match split {
            Some(f) => data::crime().split(f, seed).map_err(to_py)?,
            None => data::crime(),
        };
        Ok(Self { inner: data::crime_prepared(&base).map_err(to_py)? })
    }

    /// Heart data with continuous columns logged and centered.
    #[staticmethod]
    #[pyo3(signature = (split=None, seed=0))]
    fn heart(split: Option<f64>, seed: u64) -> PyResult<Self> {
        let base = match split {
            Some(f) => data::heart().split(f, seed).map_err(to_py)?,
            None => data::heart(),
        };
        Ok(Self { inner: data::heart_prepared(&base).map_err(to_py)? })
    }

    /// One draw of GP data on a square lattice.
    #[staticmethod]
    #[pyo3(signature = (seed, side=20, test_columns=5))]
    fn synth(seed: u64, side: usize, test_columns: usize) -> PyResult<Self> {
        let spec = LatticeSpec { side, test_columns, ..LatticeSpec::default() };
        Ok(Self { inner: data::synth_gp_dataset(&spec, seed).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, predictors, response, log=vec![], center=vec![]))]
    fn from_csv(path: &str, predictors: Vec<String>, response: String, log: Vec<String>, center: Vec<String>) -> PyResult<Self> {
        let raw = data::load_csv(path, &Schema::new(predictors, response)).map_err(to_py)?;
        Ok(Self { inner: raw.prepare(&Preparation { log, center }).map_err(to_py)? })
    }

    #[getter]
    fn predictor_names(&self) -> Vec<String> {
        self.inner.predictor_names().to_vec()
    }

    #[getter]
    fn response_name(&self) -> String {
        self.inner.response_name().to_owned()
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    #[pyo3(signature = (which="all"))]
    fn rows(&self, which: &str) -> PyResult<Vec<Vec<f64>>> {
        Ok(self.inner.rows(rows_of(which)?))
    }

    #[pyo3(signature = (which="all"))]
    fn responses(&self, which: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.responses(rows_of(which)?))
    }

    fn to_csv(&self) -> PyResult<String> {
        self.inner.to_csv_string().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, predictors={:?}, response={:?})",
            self.inner.n(),
            self.inner.predictor_names(),
            self.inner.response_name()
        )
    }
}

/// Candidate models with prior weights, built on a dataset's training rows.
#[pyclass(name = "Ensemble", module = "vbma_py", frozen)]
struct PyEnsemble {
    inner: Arc<Ensemble>,
    // concrete copies for the closed-form evidence
    zellner: Vec<ZellnerModel>,
}

#[pymethods]
impl PyEnsemble {
    /// Every subset of the predictors as a Zellner g-prior regression;
    /// `g` defaults to the number of training rows.
    #[staticmethod]
    #[pyo3(signature = (dataset, g=None))]
    fn zellner_subsets(dataset: &PyDataset, g: Option<f64>) -> PyResult<Self> {
        let train = dataset.inner.regression_data(Rows::Train).map_err(to_py)?;
        let k = train.predictor_names.len();
        let g = g.unwrap_or(train.n() as f64);
        let zellner = (0..1usize << k)
            .map(|mask| ZellnerModel::with_g(&train, &subset_from_mask(mask, k), g))
            .collect::<vbma::Result<Vec<_>>>()
            .map_err(to_py)?;
        let boxed = zellner.iter().map(|z| Box::new(z.clone()) as Box<dyn Model>).collect();
        Ok(Self { inner: Arc::new(Ensemble::uniform(boxed).map_err(to_py)?), zellner })
    }

    /// Every subset of the predictors as a logistic regression.
    #[staticmethod]
    #[pyo3(signature = (dataset, prior_sd=vbma::models::DEFAULT_PRIOR_SD))]
    fn logistic_subsets(dataset: &PyDataset, prior_sd: f64) -> PyResult<Self> {
        let train = dataset.inner.regression_data(Rows::Train).map_err(to_py)?;
        Ok(Self { inner: Arc::new(Ensemble::logistic_subsets(&train, prior_sd).map_err(to_py)?), zellner: vec![] })
    }

    /// GP regressions differing only by a fixed mean offset each.
    #[staticmethod]
    fn gp_offsets(dataset: &PyDataset, offsets: Vec<f64>) -> PyResult<Self> {
        let x = dataset
            .inner
            .rows(Rows::Train)
            .into_iter()
            .map(|r| match r[..] {
                [a, b] => Ok([a, b]),
                _ => Err(PyValueError::new_err("gp models need exactly two predictors")),
            })
            .collect::<PyResult<Vec<_>>>()?;
        let y = dataset.inner.responses(Rows::Train);
        let e = Ensemble::gp_offsets(&x, &y, &offsets, Default::default()).map_err(to_py)?;
        Ok(Self { inner: Arc::new(e), zellner: vec![] })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names()
    }

    #[getter]
    fn prior_weights(&self) -> Vec<f64> {
        self.inner.prior_weights().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn index_of(&self, name: &str) -> PyResult<usize> {
        self.inner.index_of(name).ok_or_else(|| PyKeyError::new_err(name.to_owned()))
    }

    /// Exact log evidence of every Zellner candidate.
    fn exact_log_evidence(&self) -> PyResult<Vec<f64>> {
        if self.zellner.is_empty() {
            return Err(PyValueError::new_err("exact evidence is only available for Zellner ensembles"));
        }
        self.zellner.iter().map(|z| zellner_log_evidence(z).map(|e| e.log_evidence)).collect::<vbma::Result<_>>().map_err(to_py)
    }

    /// Exact posterior model probabilities of a Zellner ensemble.
    fn exact_posterior(&self) -> PyResult<Vec<f64>> {
        if self.zellner.is_empty() {
            return Err(PyValueError::new_err("exact posterior is only available for Zellner ensembles"));
        }
        let ests = self.zellner.iter().map(zellner_log_evidence).collect::<vbma::Result<Vec<_>>>().map_err(to_py)?;
        evidence_to_posterior(&ests, self.inner.prior_weights()).map_err(to_py)
    }

    /// Monte Carlo log evidence of candidate `index` as `(value, se)`.
    fn mc_log_evidence(&self, py: Python<'_>, index: usize, draws: usize, seed: u64) -> PyResult<(f64, f64)> {
        if index >= self.inner.len() {
            return Err(PyValueError::new_err(format!("index {index} out of range")));
        }
        let e = py.detach(|| mc_log_evidence(self.inner.model(index), draws, seed)).map_err(to_py)?;
        Ok((e.log_evidence, e.std_error))
    }
}

/// Outcome of a fit: trailing-mean weights plus the state needed to predict.
#[pyclass(name = "Fit", module = "vbma_py", frozen)]
struct PyFit {
    ensemble: Arc<Ensemble>,
    state: EnsembleState,
    #[pyo3(get)]
    weights: Vec<f64>,
    #[pyo3(get)]
    weight_se: Vec<f64>,
    #[pyo3(get)]
    status: String,
}

#[pymethods]
impl PyFit {
    #[getter]
    fn names(&self) -> Vec<String> {
        self.state.model_names.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.state.iteration
    }

    /// Per-model ELBO estimate at each iteration.
    #[getter]
    fn elbo_trace(&self) -> Vec<Vec<f64>> {
        self.state.elbo_trace.clone()
    }

    fn checkpoint(&self) -> String {
        self.state.to_checkpoint()
    }

    /// Bayes factor of candidate `first` against `second`.
    fn bayes_factor(&self, first: &str, second: &str) -> PyResult<f64> {
        let idx = |n: &str| self.ensemble.index_of(n).ok_or_else(|| PyKeyError::new_err(n.to_owned()));
        predict::bayes_factor(&self.weights, self.ensemble.prior_weights(), idx(first)?, idx(second)?).map_err(to_py)
    }

    /// Predictive draws at each row of `x`: a list per input.
    #[pyo3(signature = (x, draws=2000, seed=0, noise=true))]
    fn predictive_draws(&self, py: Python<'_>, x: Vec<Vec<f64>>, draws: usize, seed: u64, noise: bool) -> PyResult<Vec<Vec<f64>>> {
        let models: Vec<&dyn Model> = self.ensemble.models().iter().map(|m| m.as_ref()).collect();
        let samplers: Vec<&dyn ParamSampler> = self.state.variational.iter().map(|v| v as &dyn ParamSampler).collect();
        let post = BmaPosterior::new(self.weights.clone(), models, samplers).map_err(to_py)?;
        let d = py.detach(|| predict::bma_draw(&post, &x, draws, seed, noise)).map_err(to_py)?;
        Ok(d.per_point)
    }

    /// `(inclusion probability, pooled draws)` of one coefficient.
    #[pyo3(signature = (name, draws=4000, seed=0))]
    fn coefficient(&self, name: &str, draws: usize, seed: u64) -> PyResult<(f64, Vec<f64>)> {
        let models: Vec<&dyn Model> = self.ensemble.models().iter().map(|m| m.as_ref()).collect();
        let samplers: Vec<&dyn ParamSampler> = self.state.variational.iter().map(|v| v as &dyn ParamSampler).collect();
        let post = BmaPosterior::new(self.weights.clone(), models, samplers).map_err(to_py)?;
        let s = predict::coefficient_summary(&post, name, draws, seed).map_err(to_py)?;
        Ok((s.inclusion, s.draws))
    }
}

/// Fits variational posteriors and model weights jointly.
#[pyfunction]
#[pyo3(signature = (
    ensemble, *, seed=0, samples=10, pretrain_iters=500, joint_iters=200, window=100,
    optimizer="adam", step_size=None, threads=None
))]
#[allow(clippy::too_many_arguments)]
fn fit(
    py: Python<'_>,
    ensemble: &PyEnsemble,
    seed: u64,
    samples: usize,
    pretrain_iters: usize,
    joint_iters: usize,
    window: usize,
    optimizer: &str,
    step_size: Option<f64>,
    threads: Option<usize>,
) -> PyResult<PyFit> {
    let rho = step_size.unwrap_or(if optimizer == "rmsprop" { 0.01 } else { 0.05 });
    let cfg = VbmaConfig {
        samples,
        pretrain_iters,
        joint_iters,
        window,
        seed,
        optimizer: OptimizerConfig::from_name(optimizer, rho).map_err(to_py)?,
        threads,
        ..VbmaConfig::default()
    };
    let ens = ensemble.inner.clone();
    let out = py.detach(|| run(&cfg, &ens)).map_err(|e| to_py(e.into()))?;
    Ok(PyFit {
        ensemble: ens,
        state: out.state,
        weights: out.weights,
        weight_se: out.weight_se,
        status: out.status.as_str().to_owned(),
    })
}

/// `(q_i / q_j) (p_j / p_i)`.
#[pyfunction]
fn bayes_factor(q: Vec<f64>, prior_weights: Vec<f64>, i: usize, j: usize) -> PyResult<f64> {
    predict::bayes_factor(&q, &prior_weights, i, j).map_err(to_py)
}

/// Equal-tail interval holding `1 - alpha` of the draws.
#[pyfunction]
fn equal_tail_interval(draws: Vec<f64>, alpha: f64) -> PyResult<(f64, f64)> {
    predict::equal_tail_interval(&draws, alpha).map_err(to_py)
}

/// Fraction of `truth` inside the equal-tail interval at each level.
#[pyfunction]
fn coverage_curve(draws: Vec<Vec<f64>>, truth: Vec<f64>, levels: Vec<f64>) -> PyResult<Vec<f64>> {
    predict::coverage_curve(&draws, &truth, &levels).map_err(to_py)
}

#[pyfunction]
fn rmse(predictions: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    predict::rmse(&predictions, &truth).map_err(to_py)
}

#[pymodule]
fn vbma_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_factor, m)?)?;
    m.add_function(wrap_pyfunction!(equal_tail_interval, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_curve, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    Ok(())
}
