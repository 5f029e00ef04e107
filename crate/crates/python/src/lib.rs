//! Python bindings. Inputs and outputs are JSON strings in the CLI schemas,
//! curves come back as lists of `(beta, value)` pairs.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use habitree::equilibrium::hetero::heterogeneous_equilibrium;
use habitree::equilibrium::homogeneous_spd;
use habitree::equilibrium::iid::{beta_grid, bond_curve as bond_curve_rs, figure_data as figure_rs, lucas_curve as lucas_curve_rs, IidEconomy};
use habitree::io;
use habitree::market::spd_pair;
use habitree::optimizer::solve_consumption_tol;
use habitree::verify::{parse_manifest, run_manifest, BUNDLED_MANIFEST};
use habitree::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Schema { .. } | Error::UnknownNode(_) | Error::Depth(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn dump(v: &serde_json::Value) -> String {
    serde_json::to_string(v).expect("values serialize")
}

/// Optimal plan for a `{"market": ..., "agent": ...}` problem.
#[pyfunction]
#[pyo3(signature = (problem, tol = 1e-9))]
fn solve(problem: &str, tol: f64) -> PyResult<String> {
    let (market, agent) = io::problem_from_json(&io::parse_json(problem).map_err(to_py)?).map_err(to_py)?;
    let r = solve_consumption_tol(&market, &agent, tol).map_err(to_py)?;
    Ok(dump(&io::solve_to_json(market.tree(), &r)))
}

/// Aggregate SPD of a market, with the perturbed SPD when an agent is given.
#[pyfunction]
fn spd(problem: &str) -> PyResult<String> {
    let v = io::parse_json(problem).map_err(to_py)?;
    let (market, agent) = if v.get("market").is_some() {
        let (m, a) = io::problem_from_json(&v).map_err(to_py)?;
        (m, Some(a))
    } else {
        (io::market_from_json(&v).map_err(to_py)?, None)
    };
    let tree = market.tree();
    let mut out = serde_json::json!({ "M": io::process_to_json(tree, market.spd()) });
    if let Some(a) = agent {
        out["Mtilde"] = io::process_to_json(tree, &spd_pair(&market, &a.habits).mtilde);
    }
    Ok(dump(&out))
}

/// Equilibrium of an economy given as JSON.
#[pyfunction]
fn equilibrium(economy: &str) -> PyResult<String> {
    let econ = io::economy_from_json(&io::parse_json(economy).map_err(to_py)?).map_err(to_py)?;
    let r = if econ.agents.len() == 1 {
        homogeneous_spd(&econ).map_err(to_py)?
    } else {
        heterogeneous_equilibrium(&econ).map_err(to_py)?.0
    };
    Ok(dump(&io::equilibrium_to_json(&econ.tree, &r)))
}

fn iid(economy: Option<&str>) -> PyResult<(IidEconomy, usize)> {
    match economy {
        None => Ok((IidEconomy::example(0.0).map_err(to_py)?, 1)),
        Some(s) => io::iid_from_json(&io::parse_json(s).map_err(to_py)?).map_err(to_py),
    }
}

#[pyfunction]
#[pyo3(signature = (start, stop, step, economy = None, horizon = None))]
fn bond_curve(start: f64, stop: f64, step: f64, economy: Option<&str>, horizon: Option<usize>) -> PyResult<Vec<(f64, f64)>> {
    let (e, t) = iid(economy)?;
    let grid = beta_grid(start, stop, step).map_err(to_py)?;
    bond_curve_rs(&e, horizon.unwrap_or(t), &grid).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (start, stop, step, economy = None))]
fn lucas_curve(start: f64, stop: f64, step: f64, economy: Option<&str>) -> PyResult<Vec<(f64, f64)>> {
    let (e, _) = iid(economy)?;
    let grid = beta_grid(start, stop, step).map_err(to_py)?;
    lucas_curve_rs(&e, &grid).map_err(to_py)
}

#[pyfunction]
fn figure_data(figure: u8) -> PyResult<Vec<(f64, f64)>> {
    figure_rs(figure).map_err(to_py)
}

/// Runs the bundled invariant suite; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (seed = None))]
fn verify(seed: Option<u64>) -> PyResult<String> {
    let m = parse_manifest(BUNDLED_MANIFEST).map_err(to_py)?;
    let rep = run_manifest(&m, seed.unwrap_or(m.seed), 1.0);
    Ok(serde_json::to_string(&rep).expect("report serializes"))
}

#[pymodule]
fn habitree_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(spd, m)?)?;
    m.add_function(wrap_pyfunction!(equilibrium, m)?)?;
    m.add_function(wrap_pyfunction!(bond_curve, m)?)?;
    m.add_function(wrap_pyfunction!(lucas_curve, m)?)?;
    m.add_function(wrap_pyfunction!(figure_data, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
