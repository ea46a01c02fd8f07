//! Python bindings: trace generation, single runs, the concurrency table
//! and the golden walkthrough.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nicsim::trace::{self, generate_trace, SyntheticWorkloadSpec, WorkloadKind};
use nicsim::{metrics, workload, ExperimentConfig, SimError, Simulator};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sim_err(e: SimError) -> PyErr {
    match e {
        SimError::Config(_) | SimError::Trace(_) => value_err(e),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Packets in flight needed to sustain `gbps` with `latency_us` per packet.
#[pyfunction]
#[pyo3(signature = (gbps, latency_us, packet_bytes = 64))]
fn concurrency_requirement(gbps: f64, latency_us: f64, packet_bytes: u64) -> u64 {
    workload::concurrency_requirement(gbps, latency_us, packet_bytes)
}

/// One dict per latency column with fitted totals and per-row counts.
#[pyfunction]
#[pyo3(signature = (packet_bytes = 64))]
fn table1(py: Python<'_>, packet_bytes: u64) -> PyResult<Vec<Py<PyAny>>> {
    workload::table1(packet_bytes)
        .into_iter()
        .map(|c| {
            let d = pyo3::types::PyDict::new(py);
            d.set_item("app_latency_us", c.app_latency_us)?;
            d.set_item("fitted_total_us", c.fitted_total_us)?;
            d.set_item("fixed_overhead_us", c.fixed_overhead_us)?;
            d.set_item("computed", c.computed.to_vec())?;
            d.set_item("published", c.published.to_vec())?;
            d.set_item("proportionality_residual", c.proportionality_residual)?;
            Ok(d.into_any().unbind())
        })
        .collect()
}

/// Replays the embedded walkthrough; raises with the first differing line.
#[pyfunction]
fn golden_check() -> PyResult<String> {
    golden_text().map_err(PyRuntimeError::new_err)
}

fn golden_text() -> Result<String, String> {
    nicsim::golden::check().map(|w| w.text).map_err(|d| d.to_string())
}

/// Writes a synthetic trace and returns its event count.
#[pyfunction]
#[pyo3(signature = (path, kind = "hash_chain", requests = 20_000, population = 50_000, chain_p = 0.5, zipf = 0.99, seed = 1, text = false))]
#[allow(clippy::too_many_arguments)]
fn gen_trace(path: PathBuf, kind: &str, requests: u64, population: u64, chain_p: f64, zipf: f64, seed: u64, text: bool) -> PyResult<usize> {
    let kind = WorkloadKind::parse(kind).ok_or_else(|| value_err(format!("unknown workload {kind:?}")))?;
    let spec = SyntheticWorkloadSpec { kind, request_count: requests, population, chain_p, zipf, ..Default::default() };
    let t = generate_trace(&spec, seed).map_err(value_err)?;
    let res = if text { trace::write_trace_text(&t, &path) } else { trace::write_trace(&t, &path) };
    res.map_err(value_err)?;
    Ok(t.len())
}

/// Runs one configuration and returns the summary metrics.
///
/// `config` is the sectioned key = value text; `overrides` maps
/// "section.key" to a value applied on top.
#[pyfunction]
#[pyo3(signature = (trace_path, config = "", overrides = None))]
fn simulate(trace_path: PathBuf, config: &str, overrides: Option<BTreeMap<String, String>>) -> PyResult<BTreeMap<String, f64>> {
    let mut cfg = ExperimentConfig::parse(config).map_err(value_err)?;
    for (k, v) in overrides.unwrap_or_default() {
        let (section, key) = k.split_once('.').ok_or_else(|| value_err(format!("{k}: expected section.key")))?;
        cfg.set(section, key, &v).map_err(value_err)?;
    }
    let is_text = trace_path.extension().is_some_and(|e| e == "txt" || e == "csv");
    let t = if is_text { trace::read_trace_text(&trace_path) } else { trace::read_trace(&trace_path) }.map_err(value_err)?;
    let run = Simulator::new(cfg, &t).and_then(|s| s.run()).map_err(sim_err)?;
    let hash = nicsim::cli::trace_hash(&t);
    Ok(metrics::summarize(&run, hash).values.into_iter().collect())
}

#[pymodule]
fn nicsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(concurrency_requirement, m)?)?;
    m.add_function(wrap_pyfunction!(table1, m)?)?;
    m.add_function(wrap_pyfunction!(golden_check, m)?)?;
    m.add_function(wrap_pyfunction!(gen_trace, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
