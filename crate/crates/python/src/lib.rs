//! Python bindings. Factor matrices cross the boundary as lists of rows;
//! tensors as a shape plus first-index-fastest data.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cnocpd::baselines::{hals_sweep, mur_sweep};
use cnocpd::bench::{self, RunConfig};
use cnocpd::datagen::gen_problem_with_noise;
use cnocpd::dtpnn::{step as dtpnn_step, DtpnnState, DtpnnVariant};
use cnocpd::flow::{flow_step, FlowState};
use cnocpd::io::{read_tensor, write_tensor};
use cnocpd::swarm::{cno_run, InnerConfig, InnerKind, SwarmConfig};
use cnocpd::{CpdError, DenseTensor, KruskalModel, Matrix, Ridge};

fn py_err(e: CpdError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i)).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Matrix::from_rows(&refs).map_err(py_err)
}

/// Dense tensor, data in first-index-fastest order.
#[pyclass(name = "Tensor", module = "cnocpd_py", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: DenseTensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: DenseTensor::new(shape, data).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: read_tensor(path.as_ref()).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_tensor(path.as_ref(), &self.inner).map_err(py_err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, index: Vec<usize>) -> PyResult<f64> {
        let ok = index.len() == self.inner.order() && index.iter().zip(self.inner.shape()).all(|(i, d)| i < d);
        if !ok {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(&index))
    }

    fn norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    fn unfold(&self, mode: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(to_rows(&cnocpd::unfold(&self.inner, mode).map_err(py_err)?))
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

/// Kruskal model: one `I_n × R` factor per mode.
#[pyclass(name = "Model", module = "cnocpd_py", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: KruskalModel,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(factors: Vec<Vec<Vec<f64>>>) -> PyResult<Self> {
        let factors = factors.iter().map(|f| from_rows(f)).collect::<PyResult<Vec<_>>>()?;
        Ok(Self { inner: KruskalModel::new(factors).map_err(py_err)? })
    }

    /// Entries uniform in `[0, 1)` from a seeded generator.
    #[staticmethod]
    fn random(shape: Vec<usize>, rank: usize, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { inner: KruskalModel::random_uniform(&shape, rank, &mut rng).map_err(py_err)? })
    }

    #[getter]
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape()
    }

    fn factors(&self) -> Vec<Vec<Vec<f64>>> {
        self.inner.factors().iter().map(to_rows).collect()
    }

    fn full(&self) -> PyTensor {
        PyTensor { inner: cnocpd::kruskal_full(&self.inner) }
    }

    fn __repr__(&self) -> String {
        format!("Model(shape={:?}, rank={})", self.inner.shape(), self.inner.rank())
    }
}

/// Returns `(tensor, truth)` for a named benchmark instance.
#[pyfunction]
#[pyo3(signature = (kind, seed, snr_db=None))]
fn gen_problem(kind: &str, seed: u64, snr_db: Option<f64>) -> PyResult<(PyTensor, PyModel)> {
    let p = gen_problem_with_noise(kind, seed, snr_db).map_err(py_err)?;
    Ok((PyTensor { inner: p.tensor }, PyModel { inner: p.truth }))
}

#[pyfunction]
fn relative_error(t: &PyTensor, m: &PyModel) -> PyResult<f64> {
    cnocpd::relative_error(&t.inner, &m.inner).map_err(py_err)
}

#[pyfunction]
fn objective(t: &PyTensor, m: &PyModel) -> PyResult<f64> {
    cnocpd::objective(&t.inner, &m.inner).map_err(py_err)
}

/// Per-factor gradients of `½‖X − ⟦A⟧‖²`.
#[pyfunction]
fn gradient(t: &PyTensor, m: &PyModel) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let eval = cnocpd::evaluate(&t.inner, &m.inner).map_err(py_err)?;
    Ok(eval.grads.iter().map(to_rows).collect())
}

#[pyfunction]
fn mttkrp(t: &PyTensor, m: &PyModel, mode: usize) -> PyResult<Vec<Vec<f64>>> {
    Ok(to_rows(&cnocpd::mttkrp(&t.inner, &m.inner, mode).map_err(py_err)?))
}

#[pyfunction]
fn khatri_rao(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let kr = cnocpd::khatri_rao(&from_rows(&a)?, &from_rows(&b)?).map_err(py_err)?;
    Ok(to_rows(&kr))
}

#[pyfunction]
#[pyo3(signature = (t, m, sweeps, seed=0))]
fn hals(t: &PyTensor, m: &PyModel, sweeps: usize, seed: u64) -> PyResult<PyModel> {
    let mut model = m.inner.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..sweeps {
        hals_sweep(&t.inner, &mut model, &mut rng).map_err(py_err)?;
    }
    Ok(PyModel { inner: model })
}

#[pyfunction]
fn mur(t: &PyTensor, m: &PyModel, sweeps: usize) -> PyResult<PyModel> {
    let mut model = m.inner.clone();
    for _ in 0..sweeps {
        mur_sweep(&t.inner, &mut model).map_err(py_err)?;
    }
    Ok(PyModel { inner: model })
}

/// Euler steps of the projection flow with a common time constant.
#[pyfunction]
#[pyo3(signature = (t, m, steps, time_constant=1.0, step_ratio=0.5, preconditioned=true))]
fn flow(t: &PyTensor, m: &PyModel, steps: usize, time_constant: f64, step_ratio: f64, preconditioned: bool) -> PyResult<PyModel> {
    let order = m.inner.order();
    let mut s = FlowState::new(m.inner.clone())
        .with_time_constants(vec![time_constant; order], Some(step_ratio * time_constant))
        .map_err(py_err)?
        .with_preconditioning(preconditioned, Ridge::Auto);
    for _ in 0..steps {
        flow_step(&t.inner, &mut s).map_err(py_err)?;
    }
    Ok(PyModel { inner: s.model })
}

/// DTPNN iterations; `variant` is `explicit`, `armijo` or `semi-implicit`.
#[pyfunction]
#[pyo3(signature = (t, m, iters, variant="armijo", lam=1.0, preconditioned=false))]
fn dtpnn(t: &PyTensor, m: &PyModel, iters: usize, variant: &str, lam: f64, preconditioned: bool) -> PyResult<PyModel> {
    let variant = match variant {
        "explicit" => DtpnnVariant::Explicit,
        "armijo" => DtpnnVariant::Armijo,
        "semi-implicit" => DtpnnVariant::SemiImplicit,
        other => return Err(PyValueError::new_err(format!("unknown variant `{other}`"))),
    };
    let order = m.inner.order();
    let mut s = DtpnnState::new(m.inner.clone())
        .with_lambdas(vec![lam; order])
        .map_err(py_err)?
        .with_preconditioning(preconditioned, Ridge::Auto);
    for _ in 0..iters {
        dtpnn_step(&t.inner, &mut s, variant).map_err(py_err)?;
    }
    Ok(PyModel { inner: s.model })
}

/// Collaborative run; returns the best model and the per-iteration
/// global-best objective values.
#[pyfunction]
#[pyo3(signature = (t, rank, q=5, k_max=20, seed=0, inner="flow", inner_steps=500, mutation=true))]
#[allow(clippy::too_many_arguments)]
fn cno(
    t: &PyTensor,
    rank: usize,
    q: usize,
    k_max: usize,
    seed: u64,
    inner: &str,
    inner_steps: usize,
    mutation: bool,
) -> PyResult<(PyModel, Vec<f64>)> {
    let kind = match inner {
        "flow" => InnerKind::Flow,
        "dtpnn-explicit" => InnerKind::DtpnnExplicit,
        "dtpnn-armijo" => InnerKind::DtpnnArmijo,
        "dtpnn-semiimplicit" => InnerKind::DtpnnSemiimplicit,
        other => return Err(PyValueError::new_err(format!("unknown inner solver `{other}`"))),
    };
    let cfg = SwarmConfig {
        q,
        k_max,
        seed,
        mutation,
        inner: InnerConfig { kind, max_steps: inner_steps, ..InnerConfig::default() },
        ..SwarmConfig::default()
    };
    let (best, trace) = cno_run(&t.inner, rank, &cfg).map_err(py_err)?;
    let values = trace.rows.iter().map(|r| r.global_best_value).collect();
    Ok((PyModel { inner: best }, values))
}

/// Runs a TOML run configuration; returns `(summary, trace_csv)`.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn run_config(config: &str, seed: Option<u64>) -> PyResult<(BTreeMap<String, String>, String)> {
    let cfg = RunConfig::from_toml(config).map_err(py_err)?;
    let rec = bench::run(&cfg, seed.unwrap_or(cfg.seed)).map_err(py_err)?;
    Ok((rec.summary(), rec.to_csv()))
}

#[pymodule]
pub fn cnocpd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gen_problem, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error, m)?)?;
    m.add_function(wrap_pyfunction!(objective, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(mttkrp, m)?)?;
    m.add_function(wrap_pyfunction!(khatri_rao, m)?)?;
    m.add_function(wrap_pyfunction!(hals, m)?)?;
    m.add_function(wrap_pyfunction!(mur, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(dtpnn, m)?)?;
    m.add_function(wrap_pyfunction!(cno, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
