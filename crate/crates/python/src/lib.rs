//! Python bindings: run configurations, solve from TOML text, and a few building blocks.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use joulefem::cli::{self, Cli, Command};
use joulefem::config::RunConfig;
use joulefem::estimate::estimate;
use joulefem::solver::{solve_joule, Spaces};
use joulefem::Error;

fn to_py(e: Error) -> PyErr {
    match cli::exit_code(&e) {
        2 | 4 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Runs a subcommand (`solve`, `estimate`, `study`, `adapt`) like the command-line tool and
/// returns its exit code.
#[pyfunction]
#[pyo3(signature = (command, config, overrides = Vec::new(), output = None, threads = 1))]
fn run(command: &str, config: PathBuf, overrides: Vec<String>, output: Option<PathBuf>, threads: usize) -> PyResult<i32> {
    let command = match command {
        "solve" => Command::Solve,
        "estimate" => Command::Estimate,
        "study" => Command::Study,
        "adapt" => Command::Adapt,
        other => return Err(PyValueError::new_err(format!("unknown command `{other}`"))),
    };
    let cli = Cli { command, config: Some(config), overrides, output, threads, quiet: true };
    Ok(cli::run(&cli))
}

/// Solves the problem described by a TOML configuration and returns a dict with the vertex
/// coordinates, the vertex values of `phi` and `u`, the Picard report and the estimator total.
#[pyfunction]
#[pyo3(signature = (config_text, overrides = Vec::new(), base_dir = None))]
fn solve<'py>(
    py: Python<'py>,
    config_text: &str,
    overrides: Vec<String>,
    base_dir: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = RunConfig::from_toml_str(config_text, &overrides, base_dir.as_deref().or(Some(Path::new(".")))).map_err(to_py)?;
    let mesh = cfg.build_mesh().map_err(to_py)?;
    let (data, exact) = cfg.build_data(&mesh).map_err(to_py)?;
    let spaces = Spaces::new(Arc::new(mesh), cfg.space.k, cfg.space.l).map_err(to_py)?;
    let (state, report) = solve_joule(&data, &spaces, &cfg.solver_params()).map_err(to_py)?;
    let est = estimate(&state.phi, &state.u, &data).map_err(to_py)?;
    let mesh = spaces.mesh();
    let nv = mesh.num_vertices();
    let dim = mesh.dim();
    let points: Vec<Vec<f64>> = mesh.vertices().iter().map(|p| p[..dim].to_vec()).collect();
    let out = PyDict::new(py);
    out.set_item("points", points)?;
    out.set_item("cells", mesh.cells().map(|c| c.to_vec()).collect::<Vec<_>>())?;
    out.set_item("phi", state.phi.coeffs()[..nv].to_vec())?;
    out.set_item("u", state.u.coeffs()[..nv].to_vec())?;
    out.set_item("converged", report.converged)?;
    out.set_item("iterations", report.iterations)?;
    out.set_item("final_increment", report.final_increment)?;
    out.set_item("estimator_total", est.weighted_total)?;
    out.set_item("indicators", est.per_cell_total.clone())?;
    if let Some(ex) = exact {
        let e = ex.errors(&state);
        out.set_item("error_phi_h1", e.phi_h1)?;
        out.set_item("error_u_h1", e.u_h1)?;
    }
    Ok(out)
}

/// Cells chosen by bulk marking, sorted by index.
#[pyfunction]
fn mark_dorfler(indicators: Vec<f64>, theta: f64) -> PyResult<Vec<usize>> {
    joulefem::adapt::mark_dorfler(&indicators, theta).map_err(to_py)
}

/// `clamp(f + g, lo, hi) - g`
#[pyfunction]
fn cutoff(f: f64, g: f64, lo: f64, hi: f64) -> f64 {
    joulefem::problem::cutoff(f, g, lo, hi)
}

/// Evaluates an expression in `x, y, z` at a point.
#[pyfunction]
#[pyo3(signature = (expr, x, y = 0.0, z = 0.0))]
fn evaluate(expr: &str, x: f64, y: f64, z: f64) -> PyResult<f64> {
    let e: joulefem::expr::Expr = expr.parse().map_err(to_py)?;
    Ok(e.eval_at(&[x, y, z]))
}

#[pymodule]
#[pyo3(name = "joulefem")]
fn joulefem_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(mark_dorfler, m)?)?;
    m.add_function(wrap_pyfunction!(cutoff, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
