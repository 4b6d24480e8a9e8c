//! Python bindings for the tcrbm library.
//!
//! Exposes the core types (matrices, model parameters, Q tables, run
//! configuration) and the main operations (chain products, CD-m training
//! steps, map recovery, policy arithmetic, sequence synthesis, and the fixed
//! and adaptive training loops) as a `_tcrbm` extension module.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tcrbm::crbm::{self, FChoice, HiddenStack, ModelParams};
use tcrbm::data::{self, SequenceSpec};
use tcrbm::harness::{self, EpochRecord, RunConfig};
use tcrbm::mat;
use tcrbm::policy::{self, Action, QTable};
use tcrbm::{Mat, SplitRng};

fn err(e: tcrbm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A dense row-major matrix of f64.
#[pyclass(name = "Mat", from_py_object)]
#[derive(Clone)]
struct PyMat {
    inner: Mat,
}

#[pymethods]
impl PyMat {
    /// Build from a rectangular list of row lists.
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(PyValueError::new_err("rows have unequal lengths"));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        Ok(Self { inner: Mat::new(r, c, data).map_err(err)? })
    }

    #[staticmethod]
    fn zeros(rows: usize, cols: usize) -> Self {
        Self { inner: Mat::zeros(rows, cols) }
    }

    #[staticmethod]
    fn random_uniform(rows: usize, cols: usize, rng: &mut PyRng) -> Self {
        Self { inner: Mat::random_uniform(rows, cols, &mut rng.inner) }
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<f64> {
        if i >= self.inner.rows() || j >= self.inner.cols() {
            return Err(PyValueError::new_err("index out of range"));
        }
        Ok(self.inner.get(i, j))
    }

    fn set(&mut self, i: usize, j: usize, v: f64) -> PyResult<()> {
        if i >= self.inner.rows() || j >= self.inner.cols() {
            return Err(PyValueError::new_err("index out of range"));
        }
        self.inner.set(i, j, v);
        Ok(())
    }

    fn tolist(&self) -> Vec<Vec<f64>> {
        (0..self.inner.rows())
            .map(|i| (0..self.inner.cols()).map(|j| self.inner.get(i, j)).collect())
            .collect()
    }

    fn transpose(&self) -> Self {
        Self { inner: self.inner.transpose() }
    }

    fn frob_sq(&self) -> f64 {
        self.inner.frob_sq()
    }

    fn max_abs_diff(&self, other: &PyMat) -> f64 {
        self.inner.max_abs_diff(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!("Mat({}x{})", self.inner.rows(), self.inner.cols())
    }
}

fn unwrap_mats(mats: Vec<PyMat>) -> Vec<Mat> {
    mats.into_iter().map(|m| m.inner).collect()
}

fn wrap_mats(mats: Vec<Mat>) -> Vec<PyMat> {
    mats.into_iter().map(|inner| PyMat { inner }).collect()
}

/// Deterministic splittable random generator.
#[pyclass(name = "Rng")]
struct PyRng {
    inner: SplitRng,
}

#[pymethods]
impl PyRng {
    #[new]
    fn new(seed: u64) -> Self {
        Self { inner: SplitRng::new(seed) }
    }

    /// An independent child stream; the parent is not advanced.
    fn split(&self, stream: u64) -> Self {
        Self { inner: self.inner.split(stream) }
    }

    fn next_f64(&mut self) -> f64 {
        self.inner.next_f64()
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.uniform(lo, hi)
    }
}

/// Parameters of one multiplicative unit: kernels, hidden biases, unit bias,
/// per-map offsets.
#[pyclass(name = "ModelParams", from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    /// Gaussian-initialized parameters for an order-`order` unit with `k`
    /// kernels of side `n_w` over `n_v`-sided maps.
    #[staticmethod]
    fn init_random(
        order: usize,
        k: usize,
        n_w: usize,
        n_v: usize,
        sigma: f64,
        rng: &mut PyRng,
    ) -> PyResult<Self> {
        Ok(Self {
            inner: ModelParams::init_random(order, k, n_w, n_v, sigma, &mut rng.inner)
                .map_err(err)?,
        })
    }

    #[getter]
    fn order(&self) -> usize {
        self.inner.order
    }

    #[getter]
    fn num_kernels(&self) -> usize {
        self.inner.num_kernels()
    }

    #[getter]
    fn unit_side(&self) -> usize {
        self.inner.unit_side()
    }

    #[getter]
    fn kernel_side(&self) -> usize {
        self.inner.kernel_side()
    }

    #[getter]
    fn kernels(&self) -> Vec<PyMat> {
        wrap_mats(self.inner.kernels.clone())
    }

    #[getter]
    fn hidden_biases(&self) -> Vec<f64> {
        self.inner.hidden_biases.clone()
    }

    #[getter]
    fn unit_bias(&self) -> PyMat {
        PyMat { inner: self.inner.unit_bias.clone() }
    }

    #[getter]
    fn map_offsets(&self) -> Vec<PyMat> {
        wrap_mats(self.inner.map_offsets.clone())
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelParams(order={}, k={}, n_w={}, n_v={})",
            self.inner.order,
            self.inner.num_kernels(),
            self.inner.kernel_side(),
            self.inner.unit_side()
        )
    }
}

/// CD-m gradients plus the reconstruction they were measured on.
#[pyclass(name = "CdResult", get_all, from_py_object)]
#[derive(Clone)]
struct PyCdResult {
    grad_kernels: Vec<PyMat>,
    grad_hidden_biases: Vec<f64>,
    grad_unit_bias: PyMat,
    grad_map_offsets: Vec<PyMat>,
    recon_maps: Vec<PyMat>,
    recon_unit: PyMat,
}

impl PyCdResult {
    fn from_inner(r: crbm::CdResult) -> Self {
        Self {
            grad_kernels: wrap_mats(r.grad_kernels),
            grad_hidden_biases: r.grad_hidden_biases,
            grad_unit_bias: PyMat { inner: r.grad_unit_bias },
            grad_map_offsets: wrap_mats(r.grad_map_offsets),
            recon_maps: wrap_mats(r.recon_maps),
            recon_unit: PyMat { inner: r.recon_unit },
        }
    }

    fn to_inner(&self) -> crbm::CdResult {
        crbm::CdResult {
            grad_kernels: unwrap_mats(self.grad_kernels.clone()),
            grad_hidden_biases: self.grad_hidden_biases.clone(),
            grad_unit_bias: self.grad_unit_bias.inner.clone(),
            grad_map_offsets: unwrap_mats(self.grad_map_offsets.clone()),
            recon_maps: unwrap_mats(self.recon_maps.clone()),
            recon_unit: self.recon_unit.inner.clone(),
        }
    }
}

/// Tabular Q values over relational orders with actions -1 / 0 / +1.
#[pyclass(name = "QTable", from_py_object)]
#[derive(Clone)]
struct PyQTable {
    inner: QTable,
}

#[pymethods]
impl PyQTable {
    #[new]
    fn new(order_min: usize, order_max: usize) -> PyResult<Self> {
        Ok(Self { inner: QTable::new(order_min, order_max).map_err(err)? })
    }

    #[getter]
    fn order_min(&self) -> usize {
        self.inner.order_min
    }

    #[getter]
    fn order_max(&self) -> usize {
        self.inner.order_max
    }

    /// Q value for (state, action delta), or None when the action is illegal
    /// at that state.
    fn get(&self, s: usize, delta: i64) -> PyResult<Option<f64>> {
        Ok(self.inner.get(s, Action::from_delta(delta).map_err(err)?))
    }

    fn max_q(&self, s: usize) -> PyResult<f64> {
        self.inner.max_q(s).map_err(err)
    }

    fn greedy_action(&self, s: usize) -> PyResult<i64> {
        Ok(self.inner.greedy_action(s).map_err(err)?.delta())
    }

    fn clamp_state(&self, s: i64) -> usize {
        self.inner.clamp_state(s)
    }

    /// All (state, action delta, q, last reward) entries.
    fn entries(&self) -> Vec<(usize, i64, f64, f64)> {
        self.inner.entries().map(|(s, a, q, r)| (s, a.delta(), q, r)).collect()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

/// Training-run configuration; unset arguments keep the library defaults.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (
        k=None, n_w=None, m=None, eta=None, epochs=None, discount=None, tau=None,
        f_choice=None, order_min=None, order_max=None, init_order_mean=None,
        init_order_std=None, init_sigma=None, recovery_cutoff=None, seed=None,
        q_blend=None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: Option<usize>,
        n_w: Option<usize>,
        m: Option<usize>,
        eta: Option<f64>,
        epochs: Option<usize>,
        discount: Option<f64>,
        tau: Option<f64>,
        f_choice: Option<String>,
        order_min: Option<usize>,
        order_max: Option<usize>,
        init_order_mean: Option<f64>,
        init_order_std: Option<f64>,
        init_sigma: Option<f64>,
        recovery_cutoff: Option<f64>,
        seed: Option<u64>,
        q_blend: Option<f64>,
    ) -> PyResult<Self> {
        let mut cfg = RunConfig::default();
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = $field { cfg.$field = v; })*
            };
        }
        take!(
            k,
            n_w,
            m,
            eta,
            epochs,
            discount,
            tau,
            order_min,
            order_max,
            init_order_mean,
            init_order_std,
            init_sigma,
            recovery_cutoff,
            seed
        );
        if let Some(f) = f_choice {
            cfg.f_choice = FChoice::parse(&f).map_err(err)?;
        }
        if q_blend.is_some() {
            cfg.q_blend = q_blend;
        }
        cfg.validate().map_err(err)?;
        Ok(Self { inner: cfg })
    }

    /// Canonical key = value form of every field.
    fn canonical(&self) -> String {
        self.inner.canonical_string()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }
}

/// Sequence-synthesis settings (rotation/shift random walk from a seed image).
#[pyclass(name = "SequenceSpec", from_py_object)]
#[derive(Clone)]
struct PySequenceSpec {
    inner: SequenceSpec,
}

#[pymethods]
impl PySequenceSpec {
    #[new]
    #[pyo3(signature = (length, max_rotation_deg=20.0, max_shift_px=2, constrained=true, seed=0))]
    fn new(
        length: usize,
        max_rotation_deg: f64,
        max_shift_px: i64,
        constrained: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = SequenceSpec { length, max_rotation_deg, max_shift_px, constrained, seed };
        spec.validate().map_err(err)?;
        Ok(Self { inner: spec })
    }
}

/// One per-unit training record.
#[pyclass(name = "Record", get_all, from_py_object)]
#[derive(Clone)]
struct PyRecord {
    epoch: usize,
    seq: usize,
    unit_index: usize,
    unit_start: usize,
    order: usize,
    j: f64,
    reward: f64,
    action: i64,
    q_digest: String,
}

impl PyRecord {
    fn from_inner(r: &EpochRecord) -> Self {
        Self {
            epoch: r.epoch,
            seq: r.seq,
            unit_index: r.unit_index,
            unit_start: r.unit_start,
            order: r.order,
            j: r.j,
            reward: r.reward,
            action: r.action,
            q_digest: r.q_digest.clone(),
        }
    }
}

/// Per-map scale factor keeping an order-`n` chain product of `side`-sided
/// maps in the unit range.
#[pyfunction]
fn chain_scale(side: usize, n: usize) -> f64 {
    mat::chain_scale(side, n)
}

/// Plain (unscaled) matrix chain product.
#[pyfunction]
fn chain_product(maps: Vec<PyMat>) -> PyResult<PyMat> {
    Ok(PyMat { inner: mat::chain_product(&unwrap_mats(maps)).map_err(err)? })
}

/// Scaled unit O and the K hidden probability maps P(h|O).
#[pyfunction]
fn chain_and_probs(maps: Vec<PyMat>, params: &PyModelParams) -> PyResult<(PyMat, Vec<PyMat>)> {
    let (o, probs) = crbm::chain_and_probs(&unwrap_mats(maps), &params.inner).map_err(err)?;
    Ok((PyMat { inner: o }, wrap_mats(probs)))
}

/// Joint energy of (maps, hidden configuration) under the model.
#[pyfunction]
fn energy(maps: Vec<PyMat>, hidden: Vec<PyMat>, params: &PyModelParams) -> PyResult<f64> {
    let stack = HiddenStack::new(unwrap_mats(hidden)).map_err(err)?;
    crbm::energy(&unwrap_mats(maps), &stack, &params.inner).map_err(err)
}

/// One m-step contrastive-divergence pass over a unit's maps.
#[pyfunction]
#[pyo3(signature = (maps, params, m, rng, recovery_cutoff=None))]
fn cd_m_step(
    maps: Vec<PyMat>,
    params: &PyModelParams,
    m: usize,
    rng: &mut PyRng,
    recovery_cutoff: Option<f64>,
) -> PyResult<PyCdResult> {
    let maps = unwrap_mats(maps);
    let res = match recovery_cutoff {
        None => crbm::cd_m_step(&maps, &params.inner, m, &mut rng.inner),
        Some(c) => crbm::cd_m_step_cut(&maps, &params.inner, m, &mut rng.inner, c),
    }
    .map_err(err)?;
    Ok(PyCdResult::from_inner(res))
}

/// Gradient-ascent update of every parameter group at one learning rate.
#[pyfunction]
fn apply_update(params: &PyModelParams, grads: &PyCdResult, eta: f64) -> PyResult<PyModelParams> {
    Ok(PyModelParams {
        inner: crbm::apply_update(&params.inner, &grads.to_inner(), eta).map_err(err)?,
    })
}

/// Cascaded least-squares recovery of each map from a unit value.
#[pyfunction]
#[pyo3(signature = (o_bar, maps, params, recovery_cutoff=None))]
fn recover_maps(
    o_bar: &PyMat,
    maps: Vec<PyMat>,
    params: &PyModelParams,
    recovery_cutoff: Option<f64>,
) -> PyResult<Vec<PyMat>> {
    let maps = unwrap_mats(maps);
    let out = match recovery_cutoff {
        None => crbm::recover_maps(&o_bar.inner, &maps, &params.inner),
        Some(c) => crbm::recover_maps_cut(&o_bar.inner, &maps, &params.inner, c),
    }
    .map_err(err)?;
    Ok(wrap_mats(out))
}

/// Normalized reconstruction error J for one unit.
#[pyfunction]
#[pyo3(signature = (orig, recon, f_choice="linear"))]
fn recon_error_j(orig: Vec<PyMat>, recon: Vec<PyMat>, f_choice: &str) -> PyResult<f64> {
    let f = FChoice::parse(f_choice).map_err(err)?;
    crbm::recon_error_j(&unwrap_mats(orig), &unwrap_mats(recon), f).map_err(err)
}

/// Softmax action distribution at a state: list of (action delta, probability).
#[pyfunction]
fn action_probs(q: &PyQTable, s: usize, cfg: &PyRunConfig) -> PyResult<Vec<(i64, f64)>> {
    let probs = policy::action_probs(&q.inner, s, &cfg.inner.policy()).map_err(err)?;
    Ok(probs.into_iter().map(|(a, p)| (a.delta(), p)).collect())
}

/// One Q-table backup for (state, action delta) toward reward + discounted max.
#[pyfunction]
fn q_backup(
    q: &PyQTable,
    s: usize,
    delta: i64,
    reward: f64,
    s_next: usize,
    cfg: &PyRunConfig,
) -> PyResult<PyQTable> {
    let a = Action::from_delta(delta).map_err(err)?;
    Ok(PyQTable {
        inner: policy::q_backup(&q.inner, s, a, reward, s_next, &cfg.inner.policy())
            .map_err(err)?,
    })
}

/// Exact minimum-total-J partition of a sequence into units of order <= cap.
/// `unit_errors` maps (start, order) tuples to J values.
#[pyfunction]
fn partition_oracle(
    unit_errors: BTreeMap<(usize, usize), f64>,
    len: usize,
    cap: usize,
) -> PyResult<(f64, Vec<(usize, usize)>)> {
    policy::partition_oracle(&unit_errors, len, cap).map_err(err)
}

/// Synthesize a rotation/shift random-walk sequence from a seed image.
#[pyfunction]
fn build_sequence(img: &PyMat, spec: &PySequenceSpec, rng: &mut PyRng) -> PyResult<Vec<PyMat>> {
    Ok(wrap_mats(data::build_sequence(&img.inner, &spec.inner, &mut rng.inner).map_err(err)?))
}

/// Train fixed-order units over the sequences; returns per-unit records.
#[pyfunction]
fn train_fixed(
    sequences: Vec<Vec<PyMat>>,
    order: usize,
    cfg: &PyRunConfig,
) -> PyResult<Vec<PyRecord>> {
    let seqs: Vec<Vec<Mat>> = sequences.into_iter().map(unwrap_mats).collect();
    let (_, records) = harness::train_fixed(&seqs, order, &cfg.inner).map_err(err)?;
    Ok(records.iter().map(PyRecord::from_inner).collect())
}

/// Train with the adaptive-order policy; returns (records, final Q table).
#[pyfunction]
fn train_adaptive(
    sequences: Vec<Vec<PyMat>>,
    cfg: &PyRunConfig,
) -> PyResult<(Vec<PyRecord>, PyQTable)> {
    let seqs: Vec<Vec<Mat>> = sequences.into_iter().map(unwrap_mats).collect();
    let (_, qtable, records) = harness::train_adaptive(&seqs, &cfg.inner).map_err(err)?;
    Ok((records.iter().map(PyRecord::from_inner).collect(), PyQTable { inner: qtable }))
}

#[pymodule]
fn _tcrbm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMat>()?;
    m.add_class::<PyRng>()?;
    m.add_class::<PyModelParams>()?;
    m.add_class::<PyCdResult>()?;
    m.add_class::<PyQTable>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PySequenceSpec>()?;
    m.add_class::<PyRecord>()?;
    m.add_function(wrap_pyfunction!(chain_scale, m)?)?;
    m.add_function(wrap_pyfunction!(chain_product, m)?)?;
    m.add_function(wrap_pyfunction!(chain_and_probs, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(cd_m_step, m)?)?;
    m.add_function(wrap_pyfunction!(apply_update, m)?)?;
    m.add_function(wrap_pyfunction!(recover_maps, m)?)?;
    m.add_function(wrap_pyfunction!(recon_error_j, m)?)?;
    m.add_function(wrap_pyfunction!(action_probs, m)?)?;
    m.add_function(wrap_pyfunction!(q_backup, m)?)?;
    m.add_function(wrap_pyfunction!(partition_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(build_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(train_fixed, m)?)?;
    m.add_function(wrap_pyfunction!(train_adaptive, m)?)?;
    Ok(())
}
