//! Python module `khj`: load, validate and solve network problems.

use khj_core::cli_io::{self, Mode, ProblemFile, SolveReport};
use khj_core::flux_limiter::{compute_fl_minus, JunctionData, JunctionHam};
use khj_core::{GridFunction, HamiltonianSpec, KernelForm, KernelSpec, KhjError, LevyIntegral};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: KhjError) -> PyErr {
    match e {
        KhjError::Io(e) => PyIOError::new_err(e.to_string()),
        KhjError::Validation(_) | KhjError::Expr(_) | KhjError::Json(_) | KhjError::Domain(_) | KhjError::Lookup(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A problem description in the JSON schema used by the `khj` CLI.
#[pyclass(name = "Problem")]
struct PyProblem {
    file: ProblemFile,
    problem: khj_core::Problem,
}

impl PyProblem {
    fn build(file: ProblemFile) -> PyResult<Self> {
        let problem = file.to_problem().map_err(to_py)?;
        Ok(Self { file, problem })
    }
}

#[pymethods]
impl PyProblem {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Self::build(ProblemFile::from_json(text).map_err(to_py)?)
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        Self::build(ProblemFile::load(path).map_err(to_py)?)
    }

    /// Violated assumptions; empty when the problem is well posed.
    fn validate(&self) -> Vec<String> {
        self.problem.check()
    }

    #[getter]
    fn edge_ids(&self) -> Vec<String> {
        self.problem.network.edges().iter().map(|e| e.id.clone()).collect()
    }

    #[getter]
    fn vertex_ids(&self) -> Vec<String> {
        self.problem.network.vertices().iter().map(|v| v.id.clone()).collect()
    }

    /// Set a uniform mesh width on every edge.
    fn set_h(&mut self, h: f64) -> PyResult<()> {
        if !(h > 0.0) {
            return Err(PyValueError::new_err("h must be positive"));
        }
        self.problem.set_h(h);
        Ok(())
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.problem.config.epsilon
    }

    #[setter]
    fn set_epsilon(&mut self, eps: f64) {
        self.problem.config.epsilon = eps;
    }

    /// Solve in `mode` (auto, dirichlet, junction, network or viscous).
    #[pyo3(signature = (mode = "auto"))]
    fn solve(&self, py: Python<'_>, mode: &str) -> PyResult<PySolution> {
        let mode: Mode = mode.parse().map_err(to_py)?;
        let out = py.detach(|| cli_io::solve_problem(&self.problem, Some(&self.file), mode));
        let values = out.solution.map(|(d, u)| edge_arrays(&d, &u));
        Ok(PySolution { report: out.report, values })
    }
}

type EdgeArrays = Vec<(String, Vec<f64>, Vec<f64>)>;

fn edge_arrays(d: &khj_core::Discretization, u: &GridFunction) -> EdgeArrays {
    d.net.edges().iter().enumerate().map(|(e, edge)| (edge.id.clone(), d.x[e].clone(), u.edge_values(e))).collect()
}

#[pyclass(name = "Solution")]
struct PySolution {
    report: SolveReport,
    values: Option<EdgeArrays>,
}

impl PySolution {
    fn edge(&self, id: &str) -> PyResult<&(String, Vec<f64>, Vec<f64>)> {
        let v = self.values.as_ref().ok_or_else(|| PyRuntimeError::new_err("solve failed; no grid values"))?;
        v.iter().find(|(e, _, _)| e == id).ok_or_else(|| PyValueError::new_err(format!("unknown edge {id}")))
    }
}

#[pymethods]
impl PySolution {
    #[getter]
    fn ok(&self) -> bool {
        self.report.ok
    }

    #[getter]
    fn error(&self) -> Option<String> {
        self.report.error.clone()
    }

    #[getter]
    fn mode(&self) -> String {
        format!("{:?}", self.report.mode).to_lowercase()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.report.theta.clone()
    }

    #[getter]
    fn vertex_ids(&self) -> Vec<String> {
        self.report.vertex_ids.clone()
    }

    #[getter]
    fn residuals(&self) -> Vec<f64> {
        self.report.residuals.clone()
    }

    /// Arc coordinates of the nodes of edge `id`.
    fn arcs(&self, id: &str) -> PyResult<Vec<f64>> {
        Ok(self.edge(id)?.1.clone())
    }

    /// Nodal values on edge `id`.
    fn values(&self, id: &str) -> PyResult<Vec<f64>> {
        Ok(self.edge(id)?.2.clone())
    }

    fn report_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.report).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!("Solution(mode={}, ok={}, theta={:?})", self.mode(), self.report.ok, self.report.theta)
    }
}

/// `∫_0^∞ min(1, r^gamma) c r^(-1-sigma) dr`, or None when it diverges.
#[pyfunction]
#[pyo3(signature = (sigma, gamma, c = 1.0))]
fn levy_integral(sigma: f64, gamma: f64, c: f64) -> PyResult<Option<f64>> {
    let k = KernelSpec::uniform(1, sigma, c.max(1.0), KernelForm::model(c));
    Ok(match k.levy_integral(0, 0, 0.0, gamma).map_err(to_py)? {
        LevyIntegral::Divergent => None,
        v => v.value(),
    })
}

/// Flux limiter `FL⁻` at a junction. Each Hamiltonian is a JSON object in the
/// problem schema; `orient` is +1 for edges leaving the junction and -1 for
/// edges entering it.
#[pyfunction]
#[pyo3(signature = (g, hamiltonians, b, orient = None))]
fn fl_minus(g: Vec<f64>, hamiltonians: Vec<String>, b: f64, orient: Option<Vec<f64>>) -> PyResult<f64> {
    if g.len() != hamiltonians.len() {
        return Err(PyValueError::new_err("g and hamiltonians differ in length"));
    }
    let orient = orient.unwrap_or_else(|| vec![1.0; g.len()]);
    let hams = hamiltonians
        .iter()
        .zip(&orient)
        .map(|(s, &o)| {
            let ham: HamiltonianSpec = serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?;
            Ok(JunctionHam { ham, x: 0.0, orient: o })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let state = compute_fl_minus(&JunctionData { g, hams, b }).map_err(to_py)?;
    Ok(state.fl_minus)
}

#[pymodule]
fn khj(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(levy_integral, m)?)?;
    m.add_function(wrap_pyfunction!(fl_minus, m)?)?;
    Ok(())
}
