//! Python bindings: lattices, couplings, both solvers and the trace analysis.

use moire::analysis::{self, EmissionTrace, SolverKind, TraceMetadata};
use moire::cumulant::{evolve_cumulant, init_from_fock, CumulantOptions};
use moire::exact::{self, evolve_master, DensityMatrixState, ExactOptions, FockBasis};
use moire::lattice::{self, Doping, LatticeConfiguration, Pattern};
use moire::{CouplingMatrices, ModelParameters};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: moire::Error) -> PyErr {
    match e {
        moire::Error::ClosureBreakdown { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn pattern(name: &str) -> PyResult<Pattern> {
    name.parse().map_err(|_| PyValueError::new_err(format!("unknown pattern `{name}`")))
}

fn params(gamma: f64, eps_dd: f64, tunneling_t: f64) -> ModelParameters {
    ModelParameters {
        gamma,
        eps_dd,
        tunneling_t,
    }
}

/// Triangular moire lattice with exciton occupancy and blocked (doped) sites.
#[pyclass(name = "Lattice", module = "moire_radiance", from_py_object)]
#[derive(Clone)]
struct PyLattice(LatticeConfiguration);

#[pymethods]
impl PyLattice {
    /// Empty `n_rows x n_cols` lattice with spacing `a_over_lambda`.
    #[new]
    fn new(n_rows: usize, n_cols: usize, a_over_lambda: f64) -> PyResult<Self> {
        lattice::build_triangular(n_rows, n_cols, a_over_lambda).map(Self).map_err(err)
    }

    fn ordered(&self, pattern_name: &str) -> PyResult<Self> {
        lattice::ordered_filling(&self.0, pattern(pattern_name)?).map(Self).map_err(err)
    }

    fn random(&self, f_x: f64, seed: u64) -> PyResult<Self> {
        lattice::random_filling(&self.0, f_x, seed).map(Self).map_err(err)
    }

    /// Ordered excitons plus electrons; `f_e=None` dopes every free site.
    #[pyo3(signature = (pattern_name, f_e=None))]
    fn doped(&self, pattern_name: &str, f_e: Option<f64>) -> PyResult<Self> {
        let doping = f_e.map_or(Doping::Complementary, Doping::Fraction);
        lattice::doped_configuration(&self.0, pattern(pattern_name)?, doping).map(Self).map_err(err)
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.0.n_rows
    }

    #[getter]
    fn n_cols(&self) -> usize {
        self.0.n_cols
    }

    #[getter]
    fn a_over_lambda(&self) -> f64 {
        self.0.a_over_lambda
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 2]> {
        self.0.positions.clone()
    }

    #[getter]
    fn occupancy(&self) -> Vec<bool> {
        self.0.occupancy.clone()
    }

    #[getter]
    fn blocked(&self) -> Vec<bool> {
        self.0.blocked.clone()
    }

    #[getter]
    fn n_active(&self) -> usize {
        self.0.n_active()
    }

    #[getter]
    fn f_x(&self) -> f64 {
        self.0.f_x()
    }

    #[getter]
    fn f_e(&self) -> f64 {
        self.0.f_e()
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        LatticeConfiguration::from_json(text).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.n_sites()
    }

    fn __repr__(&self) -> String {
        format!(
            "Lattice({}x{}, a/lambda={}, excitons={}, electrons={})",
            self.0.n_rows,
            self.0.n_cols,
            self.0.a_over_lambda,
            self.0.n_occupied(),
            self.0.n_blocked()
        )
    }
}

/// `J`, `Gamma` and `V` over the active sites of a lattice.
#[pyclass(name = "Couplings", module = "moire_radiance", from_py_object)]
#[derive(Clone)]
struct PyCouplings(CouplingMatrices);

#[pymethods]
impl PyCouplings {
    #[new]
    #[pyo3(signature = (lattice, eps_dd=0.0, tunneling_t=0.0, gamma=1.0))]
    fn new(lattice: &PyLattice, eps_dd: f64, tunneling_t: f64, gamma: f64) -> PyResult<Self> {
        CouplingMatrices::build(&lattice.0, &params(gamma, eps_dd, tunneling_t)).map(Self).map_err(err)
    }

    #[getter]
    fn j(&self) -> Vec<Vec<f64>> {
        rows(&self.0.j)
    }

    #[getter]
    fn gamma(&self) -> Vec<Vec<f64>> {
        rows(&self.0.gamma)
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        rows(&self.0.v)
    }

    #[getter]
    fn active(&self) -> Vec<usize> {
        self.0.active.clone()
    }

    /// Copy with the off-diagonal decay rates removed.
    fn independent_emitters(&self) -> Self {
        Self(self.0.independent_emitters())
    }

    /// Eigenvalues of the collective decay operator in the `n_x` sector.
    fn decay_rates(&self, n_x: usize) -> PyResult<Vec<f64>> {
        exact::decay_spectrum(&self.0, n_x).map(|s| s.rates).map_err(err)
    }
}

/// Emission-rate time series of one run or of a disorder average.
#[pyclass(name = "Trace", module = "moire_radiance", from_py_object)]
#[derive(Clone)]
struct PyTrace(EmissionTrace);

#[pymethods]
impl PyTrace {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }

    #[getter]
    fn total_excitons(&self) -> Vec<f64> {
        self.0.total_excitons.clone()
    }

    #[getter]
    fn gamma_rate(&self) -> Vec<f64> {
        self.0.gamma_rate.clone()
    }

    #[getter]
    fn eps_dd(&self) -> f64 {
        self.0.metadata.params.eps_dd
    }

    /// `(Gamma_max, t_peak)`.
    fn gamma_max(&self) -> (f64, f64) {
        analysis::gamma_max(&self.0)
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.0.write_csv(&mut buf).map_err(err)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Integrate the full master equation from the lattice's Fock state.
#[pyfunction]
#[pyo3(signature = (lattice, eps_dd=0.0, t_max=4.0, dt_out=0.01, rtol=1e-8, atol=1e-10, tunneling_t=0.0, gamma=1.0))]
#[allow(clippy::too_many_arguments)]
fn evolve_exact(
    py: Python<'_>,
    lattice: &PyLattice,
    eps_dd: f64,
    t_max: f64,
    dt_out: f64,
    rtol: f64,
    atol: f64,
    tunneling_t: f64,
    gamma: f64,
) -> PyResult<PyTrace> {
    let p = params(gamma, eps_dd, tunneling_t);
    let lat = lattice.0.clone();
    py.detach(|| {
        let c = CouplingMatrices::build(&lat, &p)?;
        let basis = FockBasis::new(c.n_active())?;
        let rho = DensityMatrixState::fock(&basis, &lat.active_occupancy())?;
        let opts = ExactOptions {
            t_max,
            dt_out,
            rtol,
            atol,
            ..Default::default()
        };
        let run = evolve_master(&rho, &c, &opts, None)?;
        EmissionTrace::from_moments(&run.times, &run.total_excitons, &run.coherences, &c.gamma, TraceMetadata::new(&lat, &p, SolverKind::Exact))
    })
    .map(PyTrace)
    .map_err(err)
}

/// Integrate the cumulant closure of the given order (2 or 3).
#[pyfunction]
#[pyo3(signature = (lattice, eps_dd=0.0, order=3, t_max=3.0, dt_out=0.01, rtol=1e-7, atol=1e-9, tunneling_t=0.0, gamma=1.0))]
#[allow(clippy::too_many_arguments)]
fn evolve_cumulant_closure(
    py: Python<'_>,
    lattice: &PyLattice,
    eps_dd: f64,
    order: u8,
    t_max: f64,
    dt_out: f64,
    rtol: f64,
    atol: f64,
    tunneling_t: f64,
    gamma: f64,
) -> PyResult<PyTrace> {
    let p = params(gamma, eps_dd, tunneling_t);
    let lat = lattice.0.clone();
    py.detach(|| {
        let c = CouplingMatrices::build(&lat, &p)?;
        let s = init_from_fock(&lat, order)?;
        let opts = CumulantOptions {
            t_max,
            dt_out,
            rtol,
            atol,
            ..Default::default()
        };
        let run = evolve_cumulant(&s, &c, &opts)?;
        EmissionTrace::from_moments(
            &run.times,
            &run.total_excitons,
            &run.coherences,
            &c.gamma,
            TraceMetadata::new(&lat, &p, SolverKind::Cumulant { order }),
        )
    })
    .map(PyTrace)
    .map_err(err)
}

/// `Gamma_max(eps_dd) / Gamma_max(0)`.
#[pyfunction]
fn eta(with_interactions: &PyTrace, without: &PyTrace) -> PyResult<f64> {
    analysis::eta(&with_interactions.0, &without.0).map_err(err)
}

/// `Gamma_max(doped) / Gamma_max(undoped)`.
#[pyfunction]
fn chi(doped: &PyTrace, undoped: &PyTrace) -> PyResult<f64> {
    analysis::chi(&doped.0, &undoped.0).map_err(err)
}

/// Pointwise mean trace over disorder realisations.
#[pyfunction]
fn disorder_average(traces: Vec<PyTrace>) -> PyResult<PyTrace> {
    let runs: Vec<EmissionTrace> = traces.into_iter().map(|t| t.0).collect();
    analysis::disorder_average(&runs).map(|a| PyTrace(a.mean)).map_err(err)
}

/// Fit `value = inf + alpha / N`; returns a dict with the fit and its errors.
#[pyfunction]
fn finite_size_fit(py: Python<'_>, points: Vec<(f64, f64)>) -> PyResult<Py<pyo3::types::PyDict>> {
    let fit = analysis::finite_size_fit(&points).map_err(err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("inf", fit.inf)?;
    d.set_item("alpha", fit.alpha)?;
    d.set_item("residual", fit.residual)?;
    d.set_item("inf_std_error", fit.inf_std_error)?;
    d.set_item("alpha_std_error", fit.alpha_std_error)?;
    Ok(d.unbind())
}

#[pymodule]
#[pyo3(name = "moire_radiance")]
fn py_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLattice>()?;
    m.add_class::<PyCouplings>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(evolve_exact, m)?)?;
    m.add_function(wrap_pyfunction!(evolve_cumulant_closure, m)?)?;
    m.add_function(wrap_pyfunction!(eta, m)?)?;
    m.add_function(wrap_pyfunction!(chi, m)?)?;
    m.add_function(wrap_pyfunction!(disorder_average, m)?)?;
    m.add_function(wrap_pyfunction!(finite_size_fit, m)?)?;
    m.add("PATTERNS", Pattern::ALL.iter().map(|p| p.name()).collect::<Vec<_>>())?;
    Ok(())
}
