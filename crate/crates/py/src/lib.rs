//! Python bindings: `import codedfl`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_bigint::{BigInt, BigUint};
use pyo3::exceptions::{PyIOError, PyOverflowError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coded_fl::carrier::Integers;
use coded_fl::cli::{run_experiment as run_mode, Mode};
use coded_fl::config::load_experiment;
use coded_fl::field::{FieldElement, FieldParams};
use coded_fl::lcc::{self, DecodeOutcome};
use coded_fl::matrix::Matrix;
use coded_fl::pinn::{PinnArch, PinnModel};
use coded_fl::verify::{run_suite, Suite};
use coded_fl::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        e @ Error::CapacityOverflow { .. } => PyOverflowError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn matrix<T: Clone>(rows: &[Vec<T>]) -> PyResult<Matrix<T>> {
    Matrix::from_rows(rows).map_err(py_err)
}

fn rows<T: Clone>(m: &Matrix<T>) -> Vec<Vec<T>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

/// A prime field F_p. Accepts an int or an expression such as "2^200-75".
#[pyclass(name = "FieldParams", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyField(FieldParams);

#[pymethods]
impl PyField {
    #[new]
    fn new(modulus: &Bound<'_, PyAny>) -> PyResult<Self> {
        let field = if let Ok(s) = modulus.extract::<String>() {
            FieldParams::parse(&s)
        } else {
            FieldParams::new(modulus.extract::<BigUint>()?)
        };
        field.map(PyField).map_err(py_err)
    }

    #[getter]
    fn modulus(&self) -> BigUint {
        self.0.modulus().clone()
    }

    #[getter]
    fn half(&self) -> BigUint {
        self.0.half().clone()
    }

    /// The element congruent to `value`.
    fn element(&self, value: BigInt) -> PyElement {
        PyElement(self.0.element(self.0.reduce_signed(&value)))
    }

    fn to_signed(&self, residue: BigUint) -> BigInt {
        self.0.to_signed(&self.0.reduce(&residue))
    }

    fn from_signed(&self, value: BigInt) -> PyResult<BigUint> {
        self.0.from_signed(&value).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("FieldParams({:?})", self.0.expr())
    }
}

#[pyclass(name = "FieldElement", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyElement(FieldElement);

#[pymethods]
impl PyElement {
    #[getter]
    fn residue(&self) -> BigUint {
        self.0.residue().clone()
    }

    fn to_signed(&self) -> BigInt {
        self.0.to_signed()
    }

    fn inv(&self) -> PyResult<Self> {
        self.0.inv().map(PyElement).map_err(py_err)
    }

    fn __add__(&self, other: &Self) -> PyResult<Self> {
        self.0.add(&other.0).map(PyElement).map_err(py_err)
    }

    fn __sub__(&self, other: &Self) -> PyResult<Self> {
        self.0.sub(&other.0).map(PyElement).map_err(py_err)
    }

    fn __mul__(&self, other: &Self) -> PyResult<Self> {
        self.0.mul(&other.0).map(PyElement).map_err(py_err)
    }

    fn __pow__(&self, exp: BigUint, _modulo: Option<&Bound<'_, PyAny>>) -> Self {
        PyElement(self.0.pow(&exp))
    }

    fn __int__(&self) -> BigUint {
        self.0.residue().clone()
    }

    fn __repr__(&self) -> String {
        format!("FieldElement({} mod {})", self.0.residue(), self.0.params().expr())
    }
}

/// Lagrange coding parameters `(N, K, T, deg_g)`.
#[pyclass(name = "CodingConfig", frozen)]
struct PyCoding(lcc::CodingConfig);

#[pymethods]
impl PyCoding {
    #[new]
    fn new(field: &PyField, n_clients: usize, shards: usize, privacy: usize, grad_degree: usize) -> PyResult<Self> {
        lcc::CodingConfig::new(field.0.clone(), n_clients, shards, privacy, grad_degree)
            .map(PyCoding)
            .map_err(py_err)
    }

    #[getter]
    fn recovery_threshold(&self) -> usize {
        self.0.recovery_threshold()
    }

    #[getter]
    fn max_dropouts(&self) -> usize {
        self.0.max_dropouts()
    }

    #[getter]
    fn alphas(&self) -> Vec<BigUint> {
        self.0.alphas().to_vec()
    }

    #[getter]
    fn betas(&self) -> Vec<BigUint> {
        self.0.betas().to_vec()
    }

    /// Encodes K shards plus T masks (row-major residue matrices of equal
    /// shape) into one matrix per client.
    fn encode(&self, shards: Vec<Vec<Vec<BigUint>>>, masks: Vec<Vec<Vec<BigUint>>>) -> PyResult<Vec<Vec<Vec<BigUint>>>> {
        let shards = shards.iter().map(|s| matrix(s)).collect::<PyResult<Vec<_>>>()?;
        let masks = masks.iter().map(|s| matrix(s)).collect::<PyResult<Vec<_>>>()?;
        let out = lcc::encode_dataset(self.0.field(), &shards, &masks, self.0.betas(), self.0.alphas()).map_err(py_err)?;
        Ok(out.iter().map(rows).collect())
    }

    /// Decodes `{client index: upload}`; returns None when too few arrived.
    fn decode(&self, uploads: BTreeMap<usize, Vec<BigUint>>) -> PyResult<Option<Vec<Vec<BigUint>>>> {
        match lcc::decode_gradients(&uploads, &self.0).map_err(py_err)? {
            DecodeOutcome::Decoded(d) => Ok(Some(d)),
            DecodeOutcome::Skip { .. } => Ok(None),
        }
    }
}

#[pyfunction]
fn lagrange_interpolate_eval(field: &PyField, points: Vec<(BigUint, Vec<BigUint>)>, target: BigUint) -> PyResult<Vec<BigUint>> {
    lcc::lagrange_interpolate_eval(&field.0, &points, &target).map_err(py_err)
}

/// `n` unbiased roundings of `z` from a seeded stream.
#[pyfunction]
#[pyo3(signature = (z, n = 1, seed = 0))]
fn stochastic_round(z: f64, n: usize, seed: u64) -> Vec<BigInt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| coded_fl::fxp::stochastic_round(z, &mut rng)).collect()
}

#[pyfunction]
fn degree_of_gradient(n_activations: usize) -> usize {
    coded_fl::pinn::degree_of_gradient(n_activations)
}

/// Summed squared-error gradient of a quadratic-activation network in flat
/// `(W1, b1, W2, b2, ...)` order. With `field`, the computation runs in F_p
/// and the result is returned in the signed view.
#[pyfunction]
#[pyo3(signature = (layer_dims, params, x, y, field = None))]
fn gradient(
    layer_dims: Vec<usize>,
    params: Vec<BigInt>,
    x: Vec<Vec<BigInt>>,
    y: Vec<Vec<BigInt>>,
    field: Option<&PyField>,
) -> PyResult<Vec<BigInt>> {
    let arch = PinnArch::new(layer_dims).map_err(py_err)?;
    let (x, y) = (matrix(&x)?, matrix(&y)?);
    match field {
        None => {
            let m = PinnModel::from_flat(arch, Integers, params).map_err(py_err)?;
            Ok(m.gradient(&x, &y).map_err(py_err)?.into_inner())
        }
        Some(f) => {
            let f = &f.0;
            let emb = |v: &BigInt| f.from_signed(v);
            let p = params.iter().map(emb).collect::<coded_fl::Result<Vec<_>>>().map_err(py_err)?;
            let m = PinnModel::from_flat(arch, f.clone(), p).map_err(py_err)?;
            let g = m
                .gradient(&x.try_map(emb).map_err(py_err)?, &y.try_map(emb).map_err(py_err)?)
                .map_err(py_err)?;
            Ok(g.into_inner().iter().map(|r| f.to_signed(r)).collect())
        }
    }
}

/// Features and labels of the synthetic blob dataset.
#[pyfunction]
fn gen_synth(n: usize, dx: usize, classes: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = coded_fl::data::gen_synth(n, dx, classes, seed).map_err(py_err)?;
    Ok((rows(&ds.features), ds.labels))
}

/// Runs a config file in mode "dres", "fedavg" or "centralized" and returns
/// one dict per round.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: PathBuf, mode: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mode = match mode {
        "dres" => Mode::Dres,
        "fedavg" => Mode::Fedavg,
        "centralized" => Mode::Centralized,
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    let exp = load_experiment(&config).map_err(py_err)?;
    let outcome = py.detach(|| run_mode(&exp, mode)).map_err(py_err)?;
    outcome
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("t", r.t)?;
            d.set_item("survivors", r.survivors.clone())?;
            d.set_item("skipped", r.skipped)?;
            d.set_item("grad_norm", r.grad_norm)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("test_acc", r.test_acc)?;
            Ok(d)
        })
        .collect()
}

/// `(name, passed, detail)` for each property of a verification suite.
#[pyfunction]
fn verify(suite: &str) -> PyResult<Vec<(String, bool, String)>> {
    let suite: Suite = suite.parse().map_err(py_err)?;
    Ok(run_suite(suite).into_iter().map(|c| (c.name.to_string(), c.passed, c.detail)).collect())
}

/// Lagrange-coded federated training over a prime field.
#[pymodule]
mod codedfl {
    #[pymodule_export]
    use super::{
        degree_of_gradient, gen_synth, gradient, lagrange_interpolate_eval, run_experiment, stochastic_round, verify,
        PyCoding, PyElement, PyField,
    };
}
