//! Python bindings: plants, laws, collectives, certification and the robot testbed.
//!
//! Matrices cross the boundary as lists of rows, vectors as lists of floats,
//! and reports as plain dicts.

use cilc::collective::CertifyOptions;
use cilc::twipr::{Archetype, TwiprSetup, TwiprStudy};
use cilc::{CilcError, Mat, Vector};
use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

create_exception!(cilc_py, NumericalBlowup, PyRuntimeError);

fn to_py(e: CilcError) -> PyErr {
    match e {
        CilcError::NumericalBlowup { .. } => NumericalBlowup::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    cilc::linalg::from_rows(&rows)
        .ok_or_else(|| PyValueError::new_err("matrix rows must be non-empty and of equal length"))
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn dict<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "LiftedPlant", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPlant(cilc::LiftedPlant);

#[pymethods]
impl PyPlant {
    #[new]
    #[pyo3(signature = (p, d=None))]
    fn new(p: Vec<Vec<f64>>, d: Option<Vec<f64>>) -> PyResult<Self> {
        let p = mat(p)?;
        let d = d.map_or_else(|| Vector::zeros(p.nrows()), |d| Vector::from_vec(d));
        cilc::LiftedPlant::new(p, d).map(PyPlant).map_err(to_py)
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        rows(self.0.p())
    }

    #[getter]
    fn d(&self) -> Vec<f64> {
        vec_of(self.0.d())
    }

    fn simulate(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0
            .simulate_trial(&Vector::from_vec(u))
            .map(|y| vec_of(&y))
            .map_err(to_py)
    }
}

#[pyclass(name = "AgentLaw", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyLaw(cilc::AgentLaw);

#[pymethods]
impl PyLaw {
    #[new]
    fn new(id: usize, q: Vec<Vec<f64>>, l: Vec<Vec<f64>>) -> PyResult<Self> {
        cilc::AgentLaw::new(id, mat(q)?, mat(l)?).map(PyLaw).map_err(to_py)
    }

    /// Norm-optimal law with weights `s` (input change) and `r` (input size).
    #[staticmethod]
    fn noilc(plant: &PyPlant, s: f64, r: f64, id: usize) -> PyResult<Self> {
        let w = cilc::NoilcWeights::new(s, r).map_err(to_py)?;
        cilc::design_noilc(&plant.0, w, id).map(PyLaw).map_err(to_py)
    }

    #[staticmethod]
    fn deadbeat(plant: &PyPlant, id: usize) -> PyResult<Self> {
        cilc::AgentLaw::deadbeat(id, &plant.0).map(PyLaw).map_err(to_py)
    }

    #[getter]
    fn id(&self) -> usize {
        self.0.id
    }

    #[getter]
    fn q(&self) -> Vec<Vec<f64>> {
        rows(&self.0.q)
    }

    #[getter]
    fn l(&self) -> Vec<Vec<f64>> {
        rows(&self.0.l)
    }

    /// rho, gamma, kappa and the residual error for this law on `plant`.
    fn analyze<'py>(&self, py: Python<'py>, plant: &PyPlant, reference: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let rep = cilc::analyze_agent(&plant.0, &self.0, &Vector::from_vec(reference)).map_err(to_py)?;
        dict(py, &rep)
    }
}

#[pyclass(name = "Collective", frozen)]
struct PyCollective(cilc::Collective);

#[pymethods]
impl PyCollective {
    #[new]
    fn new(plant: &PyPlant, laws: Vec<PyRef<'_, PyLaw>>, reference: Vec<f64>) -> PyResult<Self> {
        let laws = laws.iter().map(|l| l.0.clone()).collect();
        cilc::Collective::new(plant.0.clone(), laws, Vector::from_vec(reference))
            .map(PyCollective)
            .map_err(to_py)
    }

    /// The two-dimensional golden example.
    #[staticmethod]
    fn appendix_a() -> Self {
        PyCollective(cilc::fixtures::appendix_a_collective())
    }

    #[getter]
    fn size(&self) -> usize {
        self.0.size()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    /// Collective run; returns `e_bar` norms, best performers and hold flags.
    #[pyo3(signature = (trials, u0=None, hold=false))]
    fn run<'py>(&self, py: Python<'py>, trials: usize, u0: Option<Vec<f64>>, hold: bool) -> PyResult<Bound<'py, PyAny>> {
        let u0 = u0.map_or_else(|| Vector::zeros(self.0.horizon()), Vector::from_vec);
        let h = cilc::run_cilc(&self.0, &u0, trials, hold).map_err(to_py)?;
        #[derive(Serialize)]
        struct Run {
            e_bar_norms: Vec<f64>,
            best_sequence: Vec<usize>,
            agent_norms: Vec<Vec<f64>>,
            held: Vec<bool>,
        }
        let run = Run {
            e_bar_norms: h.e_bar_norms(),
            best_sequence: h.best_sequence(),
            agent_norms: (1..=self.0.size()).map(|id| h.agent_norms(id)).collect(),
            held: h.trials.iter().map(|t| t.held).collect(),
        };
        dict(py, &run)
    }

    /// Convergence certificate (per-agent and collective).
    #[pyo3(signature = (sampling_budget=None, seed=0, grid_spacing=None))]
    fn certify<'py>(
        &self,
        py: Python<'py>,
        sampling_budget: Option<usize>,
        seed: u64,
        grid_spacing: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let d = CertifyOptions::default();
        let opts = CertifyOptions {
            sampling_budget: sampling_budget.unwrap_or(d.sampling_budget),
            seed,
            grid_spacing: grid_spacing.unwrap_or(d.grid_spacing),
        };
        let rep = cilc::certify_collective(&self.0, opts).map_err(to_py)?;
        dict(py, &rep)
    }

    /// Lower and upper bounds on the collective contraction rate.
    #[pyo3(signature = (sampling_budget, seed=0))]
    fn gamma_bar(&self, sampling_budget: usize, seed: u64) -> PyResult<(f64, f64)> {
        let omegas = self.0.omegas().map_err(to_py)?;
        let b = cilc::gamma_bar(&omegas, sampling_budget, seed).map_err(to_py)?;
        Ok((b.lower, b.rigorous_upper()))
    }

    /// Closed-form best-performer sequence for trials `0..=horizon` from zero input.
    fn predict_best_performers(&self, horizon: usize) -> PyResult<Vec<usize>> {
        let (e0, rd) = self.zero_input_errors()?;
        let omegas = self.0.omegas().map_err(to_py)?;
        let psis = self.0.psis().map_err(to_py)?;
        cilc::predict_best_performers(&omegas, &psis, &e0, &rd, horizon)
            .map(|p| p.sequence)
            .map_err(to_py)
    }

    /// Well-performing verdict for trials `0..=horizon` from zero input.
    fn well_performing<'py>(&self, py: Python<'py>, horizon: usize) -> PyResult<Bound<'py, PyAny>> {
        let (e0, rd) = self.zero_input_errors()?;
        let v = cilc::certify_well_performing(&self.0, &e0, &rd, horizon).map_err(to_py)?;
        dict(py, &v)
    }
}

impl PyCollective {
    fn zero_input_errors(&self) -> PyResult<(Vector, Vector)> {
        let rd = self.0.reference_offset();
        let y0 = self
            .0
            .plant()
            .simulate_trial(&Vector::zeros(self.0.horizon()))
            .map_err(to_py)?;
        Ok((self.0.reference() - y0, rd))
    }
}

/// The balancing-robot testbed: design model, truth simulator and reference.
#[pyclass(name = "TwiprStudy", frozen)]
struct PyTwipr(TwiprStudy);

#[pymethods]
impl PyTwipr {
    /// Builds from a setup JSON string; defaults when omitted.
    #[new]
    #[pyo3(signature = (setup_json=None))]
    fn new(setup_json: Option<&str>) -> PyResult<Self> {
        let setup = match setup_json {
            Some(text) => TwiprSetup::from_json(text).map_err(to_py)?,
            None => TwiprSetup::default(),
        };
        setup.build().map(PyTwipr).map_err(to_py)
    }

    /// Lifted model the learning laws are designed on.
    #[getter]
    fn plant(&self) -> PyPlant {
        PyPlant(self.0.plant.clone())
    }

    #[getter]
    fn reference(&self) -> Vec<f64> {
        vec_of(&self.0.reference)
    }

    fn closed_loop_radius(&self) -> PyResult<f64> {
        self.0.truth_closed_loop_radius().map_err(to_py)
    }

    /// Law for one of `"conservative"`, `"balanced"`, `"greedy"`.
    fn archetype(&self, name: &str, id: usize) -> PyResult<PyLaw> {
        let a = match name {
            "conservative" => Archetype::Conservative,
            "balanced" => Archetype::Balanced,
            "greedy" => Archetype::Greedy,
            _ => return Err(PyValueError::new_err(format!("unknown archetype {name:?}"))),
        };
        cilc::design_noilc(&self.0.plant, a.default_weights(), id)
            .map(PyLaw)
            .map_err(to_py)
    }

    /// One nonlinear trial; returns the pitch output in degrees.
    fn run_trial(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        use cilc::TrialSimulator;
        self.0
            .truth
            .run_trial(&Vector::from_vec(u))
            .map(|y| vec_of(&y))
            .map_err(to_py)
    }
}

#[pymodule]
fn cilc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPlant>()?;
    m.add_class::<PyLaw>()?;
    m.add_class::<PyCollective>()?;
    m.add_class::<PyTwipr>()?;
    m.add("NumericalBlowup", m.py().get_type::<NumericalBlowup>())?;
    Ok(())
}
