use bit_core::cli::{run, Cli};
use bit_core::config::RunConfig;
use bit_core::molgraph::{graph_stats, parse_jsonl_str, synth_generate, write_jsonl, SynthSpec};
use bit_core::tasks;
use clap::Parser;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Runs the `bit` command line with `args` and returns its exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("bit".to_string()).chain(args);
    match Cli::try_parse_from(argv) {
        Ok(c) => match run(c) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e:#}");
                e.exit_code()
            }
        },
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
    }
}

/// Synthetic dataset as JSONL text.
#[pyfunction]
#[pyo3(signature = (seed, molecules=16, pockets=16, complexes=16))]
fn synth_jsonl(seed: u64, molecules: usize, pockets: usize, complexes: usize) -> PyResult<String> {
    let spec = SynthSpec { molecules, pockets, complexes, ..Default::default() };
    let entries = synth_generate(seed, &spec).map_err(value_err)?;
    let mut out = Vec::new();
    write_jsonl(&mut out, &entries).map_err(value_err)?;
    String::from_utf8(out).map_err(value_err)
}

/// Per-domain graph statistics of JSONL text, as JSON.
#[pyfunction]
fn stats_json(jsonl: &str) -> PyResult<String> {
    let entries = parse_jsonl_str(jsonl).map_err(value_err)?;
    serde_json::to_string(&graph_stats(&entries)).map_err(value_err)
}

/// Digest of a TOML run configuration.
#[pyfunction]
fn config_digest(toml: &str) -> PyResult<String> {
    Ok(RunConfig::from_toml_str(toml).map_err(value_err)?.digest())
}

#[pyfunction]
fn auc_roc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    tasks::auc_roc(&scores, &labels).map_err(value_err)
}

#[pyfunction]
fn enrichment_factor(scores: Vec<f64>, labels: Vec<bool>, alpha: f64) -> PyResult<f64> {
    tasks::enrichment_factor(&scores, &labels, alpha).map_err(value_err)
}

#[pyfunction]
fn roc_enrichment(scores: Vec<f64>, labels: Vec<bool>, fpr: f64) -> PyResult<f64> {
    tasks::roc_enrichment(&scores, &labels, fpr).map_err(value_err)
}

/// `{"rmse", "mae", "sd", "r"}` of predictions against labels.
#[pyfunction]
fn regression_metrics<'py>(py: Python<'py>, pred: Vec<f64>, labels: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let m = tasks::regression_metrics(&pred, &labels).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("rmse", m.rmse)?;
    d.set_item("mae", m.mae)?;
    d.set_item("sd", m.sd)?;
    d.set_item("r", m.r)?;
    Ok(d)
}

#[pymodule]
fn bit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add_function(wrap_pyfunction!(synth_jsonl, m)?)?;
    m.add_function(wrap_pyfunction!(stats_json, m)?)?;
    m.add_function(wrap_pyfunction!(config_digest, m)?)?;
    m.add_function(wrap_pyfunction!(auc_roc, m)?)?;
    m.add_function(wrap_pyfunction!(enrichment_factor, m)?)?;
    m.add_function(wrap_pyfunction!(roc_enrichment, m)?)?;
    m.add_function(wrap_pyfunction!(regression_metrics, m)?)?;
    Ok(())
}
