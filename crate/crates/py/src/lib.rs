//! Python bindings: states, screens, grids, the arrival-time proposals and
//! their comparison. Lengths are μm and times ms throughout.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use qarrival_core as core;
use qarrival_core::backaction::{self, AbrConfig, PabConfig};
use qarrival_core::model::SlitParameters;
use qarrival_core::observables::{self, CompareOptions};
use qarrival_core::{bohm, intrinsic, Orientation, ProposalTag};

create_exception!(qarrival, NumericalError, PyRuntimeError, "A numerical diagnostic refused the computation.");

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::InvalidParameter { .. } => PyValueError::new_err(e.to_string()),
        _ => NumericalError::new_err(format!("{}: {e}", e.kind())),
    }
}

#[pyclass(name = "TwoSlitState", frozen)]
struct PyState(core::TwoSlitState);

#[pymethods]
impl PyState {
    #[new]
    #[pyo3(signature = (s=10.0, sigma_x=0.04, sigma_y=0.5, u_x=3000.0, u_y=0.0, x0=0.0, mass_kg=None))]
    fn new(s: f64, sigma_x: f64, sigma_y: f64, u_x: f64, u_y: f64, x0: f64, mass_kg: Option<f64>) -> PyResult<Self> {
        let units = match mass_kg {
            Some(m) => core::UnitSystem::from_mass(m).map_err(err)?,
            None => core::UnitSystem::helium(),
        };
        let p = SlitParameters {
            s,
            sigma_x,
            sigma_y,
            u_x,
            u_y,
            x0,
        };
        Ok(PyState(core::TwoSlitState::from_parameters(&p, units).map_err(err)?))
    }

    /// ħ/m in μm²/ms.
    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha()
    }

    fn density(&self, x: f64, y: f64, t: f64) -> f64 {
        self.0.density(x, y, t)
    }

    /// Probability current (jx, jy).
    fn current(&self, x: f64, y: f64, t: f64) -> (f64, f64) {
        let j = self.0.current_at(x, y, t);
        (j.jx, j.jy)
    }

    /// The same state started `tau` ms later.
    fn evolved(&self, tau: f64) -> Self {
        PyState(self.0.evolved(tau))
    }

    fn __repr__(&self) -> String {
        format!("TwoSlitState(alpha={})", self.0.alpha())
    }
}

#[pyclass(name = "Screen", frozen)]
struct PyScreen(core::ScreenGeometry);

#[pymethods]
impl PyScreen {
    /// The line x = l_x, spanning y in `span`.
    #[staticmethod]
    fn vertical(l_x: f64, span: [f64; 2]) -> PyResult<Self> {
        Ok(PyScreen(core::ScreenGeometry::vertical(l_x, span).map_err(err)?))
    }

    /// The line y = l_y, spanning x in `span`.
    #[staticmethod]
    fn horizontal(l_y: f64, span: [f64; 2]) -> PyResult<Self> {
        Ok(PyScreen(core::ScreenGeometry::horizontal(l_y, span).map_err(err)?))
    }

    #[getter]
    fn orientation(&self) -> &'static str {
        match self.0.orientation {
            Orientation::Vertical => "vertical",
            Orientation::Horizontal => "horizontal",
        }
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.0.offset
    }

    #[getter]
    fn span(&self) -> [f64; 2] {
        self.0.span
    }

    fn __repr__(&self) -> String {
        format!("Screen.{}({}, {:?})", self.orientation(), self.0.offset, self.0.span)
    }
}

#[pyclass(name = "Grid", frozen)]
struct PyGrid(core::SpaceTimeGrid);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(span: [f64; 2], n_coords: usize, window: [f64; 2], n_times: usize) -> PyResult<Self> {
        Ok(PyGrid(core::SpaceTimeGrid::uniform(span, n_coords, window, n_times).map_err(err)?))
    }

    #[getter]
    fn screen_coords(&self) -> Vec<f64> {
        self.0.screen_coords.clone()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.times.clone()
    }
}

#[pyclass(name = "JointDistribution", frozen)]
struct PyJoint(core::JointDistribution);

#[pymethods]
impl PyJoint {
    #[getter]
    fn tag(&self) -> &'static str {
        self.0.tag.as_str()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.grid.n_coords(), self.0.grid.n_times())
    }

    #[getter]
    fn screen_coords(&self) -> Vec<f64> {
        self.0.grid.screen_coords.clone()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.0.grid.times.clone()
    }

    /// Density per coordinate row, per μm per ms.
    #[getter]
    fn density(&self) -> Vec<Vec<f64>> {
        (0..self.0.grid.n_coords()).map(|i| self.0.row(i).to_vec()).collect()
    }

    /// Fraction of the arrival mass inside the time window, when known.
    #[getter]
    fn capture(&self) -> Option<f64> {
        self.0.capture.as_ref().map(|c| c.fraction)
    }

    fn total(&self) -> f64 {
        self.0.total()
    }

    fn time_marginal(&self) -> (Vec<f64>, Vec<f64>) {
        let td = self.0.time_marginal();
        (td.times, td.density)
    }

    fn position_marginal(&self) -> Vec<f64> {
        self.0.position_marginal()
    }

    /// Mean arrival time per coordinate; None where a column carries no mass.
    fn local_mean_times(&self) -> Vec<Option<f64>> {
        observables::local_mean_arrival_time(&self.0).mean_time
    }

    fn mean_report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let m = observables::mean_report(&self.0).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("mean_ms", m.mean_ms)?;
        d.set_item("std_ms", m.std_ms)?;
        d.set_item("capture", m.capture.map(|c| c.fraction))?;
        Ok(d)
    }

    /// Draws `n` (coordinate, time) events from the density.
    #[pyo3(signature = (n, seed=1))]
    fn sample(&self, n: usize, seed: u64) -> PyResult<Vec<(f64, f64)>> {
        observables::sample_events(&self.0, n, seed).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("JointDistribution({}, shape={:?})", self.0.tag, self.shape())
    }
}

/// Analytic joint density of one intrinsic proposal: "SC", "STD" or "QF".
#[pyfunction]
fn joint(proposal: &str, state: &PyState, screen: &PyScreen, grid: &PyGrid) -> PyResult<PyJoint> {
    let f = match proposal {
        "SC" => intrinsic::semiclassical_joint,
        "STD" => intrinsic::standard_joint,
        "QF" => intrinsic::flux_joint,
        _ => return Err(PyValueError::new_err(format!("unknown proposal `{proposal}`, expected SC, STD or QF"))),
    };
    Ok(PyJoint(f(&state.0, &screen.0, &grid.0).map_err(err)?))
}

/// Monte Carlo joint from Bohmian trajectories: all crossings, or first
/// crossings only.
#[pyfunction]
#[pyo3(signature = (state, screen, n, grid, seed=1, first_only=false))]
fn trajectory_joint(state: &PyState, screen: &PyScreen, n: u64, grid: &PyGrid, seed: u64, first_only: bool) -> PyResult<PyJoint> {
    let jd = if first_only {
        bohm::truncated_joint(&state.0, &screen.0, n, &grid.0, seed)
    } else {
        bohm::all_arrival_joint_mc(&state.0, &screen.0, n, &grid.0, seed)
    };
    Ok(PyJoint(jd.map_err(err)?))
}

/// (coordinate, time, order, direction, trajectory index)
type Crossing = (f64, f64, u16, i8, u64);

/// Screen crossings of `n` trajectories as (coordinate, time, order,
/// direction, trajectory index).
#[pyfunction]
#[pyo3(signature = (state, screen, n, seed=1, first_exit_only=false, t_max=None))]
fn arrival_events(
    py: Python<'_>,
    state: &PyState,
    screen: &PyScreen,
    n: u64,
    seed: u64,
    first_exit_only: bool,
    t_max: Option<f64>,
) -> PyResult<Vec<Crossing>> {
    let mut cfg = bohm::EnsembleConfig::new(n, seed, &screen.0);
    cfg.first_exit_only = first_exit_only;
    if let Some(t) = t_max {
        cfg.t_max = t;
    }
    let res = py.detach(|| bohm::run_ensemble(&state.0, &screen.0, &cfg)).map_err(err)?;
    Ok(res.events.iter().map(|e| (e.x_screen, e.t, e.order, e.direction, e.seed_index)).collect())
}

/// Absorbing-boundary detector at y = l_y: the joint on `grid` and the
/// absorbed probability by the end of the solve.
#[pyfunction]
#[pyo3(signature = (state, screen, grid, kappa=1.0))]
fn abr_joint(state: &PyState, screen: &PyScreen, grid: &PyGrid, kappa: f64) -> PyResult<(PyJoint, f64)> {
    let t_max = *grid.0.times.last().expect("grids are never empty");
    let cfg = AbrConfig::for_state(&state.0, screen.0.offset, kappa, t_max);
    let sol = backaction::solve_abr_transverse(&state.0, screen.0.offset, &cfg).map_err(err)?;
    let jd = backaction::abr_joint(&state.0, &screen.0, &sol, &grid.0).map_err(err)?;
    Ok((PyJoint(jd), sol.absorbed()))
}

/// Survival-factor detector with penetration depth `lambda` (μm): the joint
/// and the absorbed probability at the end of the window.
#[pyfunction]
#[pyo3(signature = (state, screen, grid, lambda_um=1.0))]
fn pab_joint(state: &PyState, screen: &PyScreen, grid: &PyGrid, lambda_um: f64) -> PyResult<(PyJoint, f64)> {
    let r = backaction::pab_joint(&state.0, &screen.0, &PabConfig::new(lambda_um), &grid.0, None).map_err(err)?;
    Ok((PyJoint(r.joint), r.absorbed))
}

/// Distances between two joints on one grid. Truncated windows are refused
/// unless `force` is set.
#[pyfunction]
#[pyo3(signature = (a, b, force=false, coord_range=None))]
fn compare<'py>(py: Python<'py>, a: &PyJoint, b: &PyJoint, force: bool, coord_range: Option<[f64; 2]>) -> PyResult<Bound<'py, PyDict>> {
    let m = observables::compare(&a.0, &b.0, &CompareOptions { force, coord_range }).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("a", m.a)?;
    d.set_item("b", m.b)?;
    d.set_item("tv_joint", m.tv_joint)?;
    d.set_item("tv_time", m.tv_time)?;
    d.set_item("tv_position", m.tv_position)?;
    d.set_item("mean_a_ms", m.mean_a_ms)?;
    d.set_item("mean_b_ms", m.mean_b_ms)?;
    d.set_item("sup_local_mean_gap_ms", m.sup_local_mean_gap_ms)?;
    d.set_item("sup_gap_coord", m.sup_gap_coord)?;
    d.set_item("column_shifts_ms", m.column_shifts_ms)?;
    d.set_item("events_for_5sigma", m.events_for_5sigma)?;
    d.set_item("standard_error_at_1e4_ms", m.standard_error_at_1e4_ms)?;
    Ok(d)
}

/// Proposal tags known to the toolkit.
#[pyfunction]
fn proposals() -> Vec<&'static str> {
    [
        ProposalTag::Sc,
        ProposalTag::Std,
        ProposalTag::Qf,
        ProposalTag::QfPlus,
        ProposalTag::QfMinus,
        ProposalTag::Btc,
        ProposalTag::Abr,
        ProposalTag::Pab,
    ]
    .iter()
    .map(|t| t.as_str())
    .collect()
}

#[pymodule]
fn qarrival(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NumericalError", m.py().get_type::<NumericalError>())?;
    m.add_class::<PyState>()?;
    m.add_class::<PyScreen>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyJoint>()?;
    m.add_function(wrap_pyfunction!(joint, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory_joint, m)?)?;
    m.add_function(wrap_pyfunction!(arrival_events, m)?)?;
    m.add_function(wrap_pyfunction!(abr_joint, m)?)?;
    m.add_function(wrap_pyfunction!(pab_joint, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(proposals, m)?)?;
    Ok(())
}
