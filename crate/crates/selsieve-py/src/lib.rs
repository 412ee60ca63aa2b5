//! Python bindings: simulation studies, dataset fitting, pairs bootstrap,
//! and the gap decomposition, returned as plain dicts and lists.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use selsieve::data::{load_dataset, Schema};
use selsieve::decompose::{decompose as decompose_rs, CategoryStats, GroupStats};
use selsieve::error::Error;
use selsieve::montecarlo::{
    generate, run_bootstrap_study, run_study, DgpTag, Estimator, SimConfig,
};
use selsieve::pipeline::{bootstrap_dataset, fit_dataset, CategoryReport, FitRecipe};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse_dgp(architecture: &str, dgp: u8) -> PyResult<DgpTag> {
    match architecture {
        "ordered" if (1..=3).contains(&dgp) => Ok(DgpTag::Ordered(dgp)),
        "multinomial" if (1..=4).contains(&dgp) => Ok(DgpTag::Multinomial(dgp)),
        _ => Err(PyValueError::new_err(format!(
            "unknown design '{architecture}' DGP {dgp}"
        ))),
    }
}

fn parse_estimator(name: &str) -> PyResult<Estimator> {
    match name.to_ascii_lowercase().as_str() {
        "ols" => Ok(Estimator::Ols),
        "linear" => Ok(Estimator::Linear),
        "oracle" => Ok(Estimator::Oracle),
        "sieve" => Ok(Estimator::Sieve),
        "mlogit" => Ok(Estimator::Mlogit),
        "exch" | "exch-l2" => Ok(Estimator::Exch),
        other => Err(PyValueError::new_err(format!("unknown estimator '{other}'"))),
    }
}

fn report_dicts<'py>(py: Python<'py>, reports: &[CategoryReport]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut out = Vec::with_capacity(reports.len());
    for r in reports {
        let d = PyDict::new(py);
        d.set_item("category", r.category)?;
        d.set_item("beta", r.fit.beta.iter().cloned().collect::<Vec<f64>>())?;
        d.set_item("robust_se", r.fit.robust_se().iter().cloned().collect::<Vec<f64>>())?;
        d.set_item("n", r.fit.n)?;
        d.set_item("kappa", r.fit.kappa)?;
        d.set_item("condition_number", r.fit.condition_number)?;
        d.set_item("dropped", r.fit.dropped.clone())?;
        d.set_item("clamped", r.fit.clamped)?;
        out.push(d);
    }
    Ok(out)
}

/// Simulate one dataset from a built-in design.
#[pyfunction]
#[pyo3(signature = (architecture, dgp, n, seed, delta = 1.0))]
fn simulate<'py>(
    py: Python<'py>,
    architecture: &str,
    dgp: u8,
    n: usize,
    seed: u64,
    delta: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let sd = generate(parse_dgp(architecture, dgp)?, n, seed, delta).map_err(to_py_err)?;
    let out = PyDict::new(py);
    let x: Vec<Vec<f64>> =
        (0..sd.x.nrows()).map(|i| sd.x.row(i).iter().cloned().collect()).collect();
    out.set_item("x", x)?;
    out.set_item("d", sd.d.clone())?;
    out.set_item("y", sd.y.clone())?;
    out.set_item("k_max", sd.k_max)?;
    out.set_item("true_beta", sd.true_beta.clone())?;
    Ok(out)
}

/// Run a Monte Carlo study; returns one metrics dict per
/// (estimator, category, coefficient) cell.
#[pyfunction]
#[pyo3(signature = (architecture, dgp, n, replications, seed, estimators, delta = 1.0))]
#[allow(clippy::too_many_arguments)]
fn run_monte_carlo<'py>(
    py: Python<'py>,
    architecture: &str,
    dgp: u8,
    n: usize,
    replications: usize,
    seed: u64,
    estimators: Vec<String>,
    delta: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = SimConfig {
        dgp: parse_dgp(architecture, dgp)?,
        n,
        replications,
        seed,
        estimators: estimators.iter().map(|s| parse_estimator(s)).collect::<PyResult<_>>()?,
        delta,
        bootstrap: None,
    };
    let table = run_study(&cfg).map_err(to_py_err)?;
    let mut out = Vec::with_capacity(table.cells.len());
    for c in &table.cells {
        let d = PyDict::new(py);
        d.set_item("estimator", c.estimator.clone())?;
        d.set_item("category", c.category)?;
        d.set_item("coefficient", c.coefficient)?;
        d.set_item("rmse", c.rmse)?;
        d.set_item("mean_bias", c.mean_bias)?;
        d.set_item("abs_mean_bias", c.abs_mean_bias)?;
        d.set_item("coverage", c.coverage)?;
        d.set_item("mc_sd", c.mc_sd)?;
        d.set_item("mean_se", c.mean_se)?;
        out.push(d);
    }
    Ok(out)
}

/// Monte Carlo bootstrap-SE validation study; one dict per coefficient.
#[pyfunction]
#[pyo3(signature = (architecture, dgp, n, replications, b, seed, estimator, delta = 1.0))]
#[allow(clippy::too_many_arguments)]
fn run_bootstrap_validation<'py>(
    py: Python<'py>,
    architecture: &str,
    dgp: u8,
    n: usize,
    replications: usize,
    b: usize,
    seed: u64,
    estimator: &str,
    delta: f64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = SimConfig {
        dgp: parse_dgp(architecture, dgp)?,
        n,
        replications,
        seed,
        estimators: vec![parse_estimator(estimator)?],
        delta,
        bootstrap: Some(b),
    };
    let study = run_bootstrap_study(&cfg).map_err(to_py_err)?;
    let mut out = Vec::with_capacity(study.rows.len());
    for r in &study.rows {
        let d = PyDict::new(py);
        d.set_item("category", r.category)?;
        d.set_item("coefficient", r.coefficient)?;
        d.set_item("mean_hc_se", r.mean_hc_se)?;
        d.set_item("mean_boot_se", r.mean_boot_se)?;
        d.set_item("mc_sd", r.mc_sd)?;
        d.set_item("ratio", r.ratio)?;
        out.push(d);
    }
    Ok(out)
}

fn recipe(
    architecture: &str,
    estimator: &str,
    exch_l: usize,
    first_stage_interior: Option<usize>,
    second_stage_interior: Vec<usize>,
    linear_index: bool,
) -> FitRecipe {
    FitRecipe {
        architecture: architecture.to_string(),
        estimator: estimator.to_string(),
        exch_l,
        first_stage_interior,
        second_stage_interior,
        linear_index,
    }
}

/// Two-step fit on a CSV dataset; one dict per selected category.
#[pyfunction]
#[pyo3(signature = (path, d, y, architecture, estimator, categorical = vec![],
                    exch_l = 2, first_stage_interior = None,
                    second_stage_interior = vec![], linear_index = false))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    path: &str,
    d: &str,
    y: &str,
    architecture: &str,
    estimator: &str,
    categorical: Vec<String>,
    exch_l: usize,
    first_stage_interior: Option<usize>,
    second_stage_interior: Vec<usize>,
    linear_index: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let schema = Schema { d: d.to_string(), y: y.to_string(), categorical };
    let ds = load_dataset(path, &schema).map_err(to_py_err)?;
    let fc = recipe(architecture, estimator, exch_l, first_stage_interior, second_stage_interior, linear_index);
    let reports = fit_dataset(&ds, &fc).map_err(to_py_err)?;
    report_dicts(py, &reports)
}

/// Pairs bootstrap of the full two-step fit on a CSV dataset.
#[pyfunction]
#[pyo3(signature = (path, d, y, architecture, estimator, b, seed, categorical = vec![],
                    exch_l = 2, first_stage_interior = None,
                    second_stage_interior = vec![], linear_index = false))]
#[allow(clippy::too_many_arguments)]
fn bootstrap<'py>(
    py: Python<'py>,
    path: &str,
    d: &str,
    y: &str,
    architecture: &str,
    estimator: &str,
    b: usize,
    seed: u64,
    categorical: Vec<String>,
    exch_l: usize,
    first_stage_interior: Option<usize>,
    second_stage_interior: Vec<usize>,
    linear_index: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let schema = Schema { d: d.to_string(), y: y.to_string(), categorical };
    let ds = load_dataset(path, &schema).map_err(to_py_err)?;
    let fc = recipe(architecture, estimator, exch_l, first_stage_interior, second_stage_interior, linear_index);
    let res = bootstrap_dataset(&ds, &fc, b, seed).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("point", report_dicts(py, &res.point)?)?;
    out.set_item("boot_se", res.boot_se.clone())?;
    out.set_item("b", res.b)?;
    out.set_item("failed", res.failed)?;
    Ok(out)
}

/// Category-level decomposition of a raw group gap. Each entry needs keys
/// mean_a, mean_b, share_a, share_b, beta.
#[pyfunction]
fn decompose<'py>(
    py: Python<'py>,
    categories: Vec<Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut stats = Vec::with_capacity(categories.len());
    for c in &categories {
        let get = |key: &str| -> PyResult<f64> {
            c.get_item(key)?
                .ok_or_else(|| PyValueError::new_err(format!("missing key '{key}'")))?
                .extract()
        };
        stats.push(CategoryStats {
            mean_a: get("mean_a")?,
            mean_b: get("mean_b")?,
            share_a: get("share_a")?,
            share_b: get("share_b")?,
            beta: get("beta")?,
        });
    }
    let dec = decompose_rs(&GroupStats { categories: stats }).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("raw", dec.raw)?;
    out.set_item("structural_within", dec.structural_within)?;
    out.set_item("covariate_composition", dec.covariate_composition)?;
    out.set_item("between_sorting", dec.between_sorting)?;
    Ok(out)
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(run_bootstrap_validation, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    Ok(())
}
