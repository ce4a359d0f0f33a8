//! Python bindings: presets, both solvers, the transform and the
//! comparison harness.

use mrfv_core::fvcore::{UniformState, UniformStepper};
use mrfv_core::harness::{compare as run_compare, compression_rate, Experiment};
use mrfv_core::models::presets::{preset, Preset, PRESET_NAMES};
use mrfv_core::models::Boundary;
use mrfv_core::mrtree::{decode as mr_decode, encode as mr_encode, MRConfig, Pyramid};
use mrfv_core::{eo_flux as core_eo_flux, Error, ModelSpec, MrRun};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_boundary(name: &str) -> PyResult<Boundary> {
    match name {
        "periodic" => Ok(Boundary::Periodic),
        "transparent" => Ok(Boundary::Transparent),
        other => Err(PyValueError::new_err(format!("unknown boundary '{other}'"))),
    }
}

fn load(name: &str) -> PyResult<(Preset, ModelSpec)> {
    let p = preset(name).map_err(to_py)?;
    let m = p.model().map_err(to_py)?;
    Ok((p, m))
}

fn config(p: &Preset, max_level: Option<u32>, epsilon: Option<f64>) -> MRConfig {
    let mut cfg = p.mr_config();
    if let Some(l) = max_level {
        cfg.max_level = l;
        cfg.min_level = cfg.min_level.min(l);
    }
    if let Some(e) = epsilon {
        cfg.epsilon = e;
    }
    cfg
}

fn step_for(p: &Preset, m: &ModelSpec, cells: usize) -> f64 {
    p.step.dt(m.domain().length() / cells as f64)
}

/// Names of the built-in experiments.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESET_NAMES.to_vec()
}

/// Engquist-Osher flux of a preset on the branch that holds `x`.
#[pyfunction]
fn eo_flux(name: &str, x: f64, u: f64, v: f64) -> PyResult<f64> {
    let (_, m) = load(name)?;
    let branch = &m.gamma_field().branches()[m.branch_index(x)];
    Ok(core_eo_flux(&m, branch, u, v))
}

/// Multiresolution transform of fine averages: `(coarse, details)`.
#[pyfunction]
#[pyo3(signature = (fine, roots=1, boundary="periodic"))]
fn encode(fine: Vec<f64>, roots: usize, boundary: &str) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let pyr = mr_encode(&fine, roots, parse_boundary(boundary)?).map_err(to_py)?;
    Ok((pyr.coarse, pyr.details))
}

#[pyfunction]
#[pyo3(signature = (coarse, details, boundary="periodic"))]
fn decode(coarse: Vec<f64>, details: Vec<Vec<f64>>, boundary: &str) -> PyResult<Vec<f64>> {
    let pyr = Pyramid { roots: coarse.len(), boundary: parse_boundary(boundary)?, coarse, details };
    mr_decode(&pyr).map_err(to_py)
}

type LeafRow = (f64, f64, u32, usize, f64);

/// Adaptive solver on a preset.
#[pyclass(module = "mrfv")]
struct MrSolver {
    run: MrRun,
}

#[pymethods]
impl MrSolver {
    #[new]
    #[pyo3(signature = (name, max_level=None, epsilon=None))]
    fn new(name: &str, max_level: Option<u32>, epsilon: Option<f64>) -> PyResult<Self> {
        let (p, m) = load(name)?;
        let cfg = config(&p, max_level, epsilon);
        let dt = step_for(&p, &m, cfg.finest_cells());
        Ok(MrSolver { run: MrRun::new(&m, &cfg, dt).map_err(to_py)? })
    }

    #[pyo3(signature = (steps=1))]
    fn step(&mut self, steps: u64) -> PyResult<()> {
        for _ in 0..steps {
            self.run.step().map_err(to_py)?;
        }
        Ok(())
    }

    /// Steps until the time first reaches `t`.
    fn advance_to(&mut self, t: f64) -> PyResult<()> {
        while self.run.time() < t - 1e-9 * self.run.dt {
            self.run.step().map_err(to_py)?;
        }
        Ok(())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.run.time()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.run.dt
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.run.cfg.epsilon
    }

    #[setter]
    fn set_epsilon(&mut self, eps: f64) -> PyResult<()> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(PyValueError::new_err("epsilon must be finite and >= 0"));
        }
        self.run.cfg.epsilon = eps;
        Ok(())
    }

    fn leaf_count(&self) -> usize {
        self.run.tree.leaf_count()
    }

    fn compression_rate(&self) -> f64 {
        compression_rate(&self.run.tree)
    }

    fn mass(&self) -> f64 {
        self.run.mass()
    }

    /// `(lo, hi, level, index, average)` per leaf, left to right.
    fn leaves(&self) -> PyResult<Vec<LeafRow>> {
        let cells = self.run.leaf_grid().map_err(to_py)?;
        Ok(cells.into_iter().map(|c| (c.lo, c.hi, c.level, c.index, c.average)).collect())
    }

    /// Solution predicted down to the finest level.
    fn reconstruct(&self) -> Vec<f64> {
        self.run.reconstruct_fine()
    }

    /// Raises if the tree violates one of its structural rules.
    fn audit(&self) -> PyResult<()> {
        self.run.tree.audit().map_err(to_py)
    }
}

/// Uniform finite volume solver on a preset.
#[pyclass(module = "mrfv")]
struct UniformSolver {
    model: ModelSpec,
    state: UniformState,
}

#[pymethods]
impl UniformSolver {
    #[new]
    #[pyo3(signature = (name, level=None))]
    fn new(name: &str, level: Option<u32>) -> PyResult<Self> {
        let (p, m) = load(name)?;
        let level = level.unwrap_or(p.max_level);
        let dt = step_for(&p, &m, p.roots << level);
        let state = UniformState::initial(&m, level, p.roots, dt);
        // fails early on a bad step or grid
        UniformStepper::new(&m, &state).map_err(to_py)?;
        mrfv_core::fvcore::check_cfl(&m, state.dx, dt).map_err(to_py)?;
        Ok(UniformSolver { model: m, state })
    }

    #[pyo3(signature = (steps=1))]
    fn step(&mut self, steps: u64) -> PyResult<()> {
        let mut stepper = UniformStepper::new(&self.model, &self.state).map_err(to_py)?;
        for _ in 0..steps {
            stepper.step(&mut self.state).map_err(to_py)?;
        }
        Ok(())
    }

    fn advance_to(&mut self, t: f64) -> PyResult<()> {
        let mut stepper = UniformStepper::new(&self.model, &self.state).map_err(to_py)?;
        while self.state.time() < t - 1e-9 * self.state.dt {
            stepper.step(&mut self.state).map_err(to_py)?;
        }
        Ok(())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.state.time()
    }

    #[getter]
    fn averages(&self) -> Vec<f64> {
        self.state.averages.clone()
    }

    fn centers(&self) -> Vec<f64> {
        self.state.centers()
    }

    fn mass(&self) -> f64 {
        self.state.mass()
    }
}

/// Adaptive and uniform runs against a fine reference; one dict per
/// snapshot time.
#[pyfunction]
#[pyo3(signature = (name, max_level=None, epsilon=None, reference_level=None, t_final=None))]
fn compare<'py>(
    py: Python<'py>,
    name: &str,
    max_level: Option<u32>,
    epsilon: Option<f64>,
    reference_level: Option<u32>,
    t_final: Option<f64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let (p, _) = load(name)?;
    let mut exp = Experiment::from_preset(&p);
    exp.cfg = config(&p, max_level, epsilon);
    if let Some(l) = reference_level {
        exp.reference_level = l;
    }
    if let Some(t) = t_final {
        exp.t_final = t;
        exp.snapshots.clear();
    }
    let report = py.detach(|| run_compare(&exp)).map_err(to_py)?;
    report
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("t_final", r.t_final)?;
            d.set_item("eta", r.eta)?;
            d.set_item("V", r.speedup)?;
            d.set_item("V_loop", r.speedup_loop)?;
            d.set_item("L1", r.err_l1)?;
            d.set_item("L2", r.err_l2)?;
            d.set_item("Linf", r.err_linf)?;
            d.set_item("leaves", r.leaf_count)?;
            d.set_item("N_L", r.n_fine)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn mrfv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(eo_flux, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_class::<MrSolver>()?;
    m.add_class::<UniformSolver>()?;
    Ok(())
}
