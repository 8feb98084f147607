//! Python bindings. Bit strings cross the boundary as `bytes` (MSB-first)
//! plus an explicit bit count; structured results come back as dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use mdi_qrng::bits::Bits;
use mdi_qrng::extract::{ExtractionParams, DEFAULT_BLOCK_LEN, DEFAULT_EPSILON};
use mdi_qrng::pipeline::{PipelineConfig, StageError};
use mdi_qrng::protocol::{BitBlock, BlockKind};
use mdi_qrng::stats::SuiteConfig;

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn stage_error(e: StageError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_bits(data: &[u8], nbits: Option<usize>) -> PyResult<Bits> {
    let len = nbits.unwrap_or(data.len() * 8);
    if len > data.len() * 8 {
        return Err(value_error(format!("{} bytes hold fewer than {len} bits", data.len())));
    }
    Ok(Bits::from_bytes_len(data, len))
}

/// Converts through JSON so nested records arrive as plain dicts and lists.
fn to_python<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_error)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_kind(kind: &str) -> PyResult<BlockKind> {
    match kind {
        "generate" => Ok(BlockKind::Generate),
        "test_h" => Ok(BlockKind::TestH),
        "test_v" => Ok(BlockKind::TestV),
        other => Err(value_error(format!("unknown block kind {other:?}"))),
    }
}

fn kind_name(kind: BlockKind) -> &'static str {
    match kind {
        BlockKind::Generate => "generate",
        BlockKind::TestH => "test_h",
        BlockKind::TestV => "test_v",
    }
}

/// Min-entropy certificate for one pair of success probabilities.
#[pyclass(frozen, get_all)]
struct Certificate {
    p_suc_h: f64,
    p_suc_v: f64,
    p_g: f64,
    h_min: f64,
    /// H_min from the averaged success probability, for comparison.
    h_min_averaged: Option<f64>,
    method: String,
}

#[pymethods]
impl Certificate {
    fn __repr__(&self) -> String {
        format!(
            "Certificate(p_suc_h={}, p_suc_v={}, p_g={:.6}, h_min={:.4})",
            self.p_suc_h, self.p_suc_v, self.p_g, self.h_min
        )
    }
}

impl From<mdi_qrng::certify::Certificate> for Certificate {
    fn from(c: mdi_qrng::certify::Certificate) -> Self {
        Certificate {
            p_suc_h: c.p_suc_h,
            p_suc_v: c.p_suc_v,
            p_g: c.p_g,
            h_min: c.h_min,
            h_min_averaged: c.averaged.map(|a| a.h_min),
            method: serde_json::to_value(c.method)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
        }
    }
}

#[pyfunction]
fn guessing_probability(p_suc_h: f64, p_suc_v: f64) -> PyResult<f64> {
    mdi_qrng::certify::guessing_probability(p_suc_h, p_suc_v).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (p_suc_h, p_suc_v, grid_resolution=64))]
fn oracle_guessing_probability(p_suc_h: f64, p_suc_v: f64, grid_resolution: usize) -> PyResult<f64> {
    mdi_qrng::certify::oracle_guessing_probability(p_suc_h, p_suc_v, grid_resolution).map_err(value_error)
}

#[pyfunction]
fn min_entropy(p_g: f64) -> PyResult<f64> {
    mdi_qrng::certify::min_entropy(p_g).map_err(value_error)
}

#[pyfunction]
fn certify(p_suc_h: f64, p_suc_v: f64) -> PyResult<Certificate> {
    mdi_qrng::certify::certify(p_suc_h, p_suc_v)
        .map(Certificate::from)
        .map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (h8, n=DEFAULT_BLOCK_LEN, epsilon=DEFAULT_EPSILON))]
fn output_length(h8: f64, n: usize, epsilon: f64) -> PyResult<usize> {
    mdi_qrng::extract::output_length(h8, n, epsilon).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (data, nbits=None))]
fn estimate_min_entropy_8(data: &[u8], nbits: Option<usize>) -> PyResult<f64> {
    mdi_qrng::extract::estimate_min_entropy_8(&to_bits(data, nbits)?).map_err(value_error)
}

/// Toeplitz extraction. Returns `(bytes, nbits, m)`.
#[pyfunction]
#[pyo3(signature = (data, nbits=None, n=DEFAULT_BLOCK_LEN, epsilon=DEFAULT_EPSILON, h8=None))]
fn extract<'py>(
    py: Python<'py>,
    data: &[u8],
    nbits: Option<usize>,
    n: usize,
    epsilon: f64,
    h8: Option<f64>,
) -> PyResult<(Bound<'py, PyBytes>, usize, usize)> {
    let raw = to_bits(data, nbits)?;
    let h8 = match h8 {
        Some(h) => h,
        None => mdi_qrng::extract::estimate_min_entropy_8(&raw).map_err(value_error)?,
    };
    let params = ExtractionParams::new(n, epsilon, h8).map_err(value_error)?;
    let out = py
        .detach(|| mdi_qrng::extract::extract(&raw, &params))
        .map_err(value_error)?;
    Ok((PyBytes::new(py, &out.to_bytes()), out.len(), params.m))
}

#[pyfunction]
fn proportion_confidence(alpha: f64, blocks: usize) -> (f64, f64) {
    mdi_qrng::stats::proportion_confidence(alpha, blocks)
}

/// Runs the statistical battery; one dict per report row.
#[pyfunction]
#[pyo3(signature = (data, nbits=None, block_size=1_000_000, alpha=0.01, tests=None))]
fn run_suite<'py>(
    py: Python<'py>,
    data: &[u8],
    nbits: Option<usize>,
    block_size: usize,
    alpha: f64,
    tests: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let bits = to_bits(data, nbits)?;
    let mut config = SuiteConfig {
        block_size,
        alpha,
        ..SuiteConfig::default()
    };
    if let Some(names) = tests {
        config.tests = names
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()
            .map_err(value_error)?;
    }
    let reports = py
        .detach(|| mdi_qrng::stats::run_suite(&bits, &config))
        .map_err(value_error)?;
    to_python(py, &reports)
}

#[pyfunction]
fn bits_to_image<'py>(py: Python<'py>, data: &[u8], width: usize, height: usize) -> PyResult<Bound<'py, PyBytes>> {
    let pgm = mdi_qrng::pipeline::bits_to_image(&to_bits(data, None)?, width, height).map_err(value_error)?;
    Ok(PyBytes::new(py, &pgm))
}

/// Encodes one block as a datagram; `kind` is "generate", "test_h" or "test_v".
#[pyfunction]
#[pyo3(signature = (block_id, kind, data, nbits=None))]
fn encode_frame<'py>(
    py: Python<'py>,
    block_id: u64,
    kind: &str,
    data: &[u8],
    nbits: Option<usize>,
) -> PyResult<Bound<'py, PyBytes>> {
    let block = BitBlock {
        block_id,
        kind: parse_kind(kind)?,
        bits: to_bits(data, nbits)?,
        produced_at: 0.0,
    };
    let frame = mdi_qrng::transport::encode_frame(&block).map_err(value_error)?;
    Ok(PyBytes::new(py, &frame))
}

/// Returns `(block_id, kind, payload, nbits)`; raises ValueError on a bad frame.
#[pyfunction]
fn decode_frame<'py>(py: Python<'py>, frame: &[u8]) -> PyResult<(u64, &'static str, Bound<'py, PyBytes>, usize)> {
    let f = mdi_qrng::transport::decode_frame(frame).map_err(|e| value_error(format!("{}: {e}", e.kind())))?;
    Ok((
        f.block_id,
        kind_name(f.kind),
        PyBytes::new(py, &f.payload.to_bytes()),
        f.payload.len(),
    ))
}

/// Default run configuration as a dict.
#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_python(py, &PipelineConfig::default())
}

/// Full pipeline. `config` is a JSON string (absent fields take defaults);
/// returns the summary dict and writes every artifact into `out_dir`.
#[pyfunction]
#[pyo3(signature = (out_dir, config=None))]
fn run_pipeline<'py>(py: Python<'py>, out_dir: PathBuf, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let config = match config {
        Some(text) => PipelineConfig::from_json(text).map_err(stage_error)?,
        None => PipelineConfig::default(),
    };
    let summary = py
        .detach(|| mdi_qrng::pipeline::run_pipeline(&config, &out_dir))
        .map_err(stage_error)?;
    to_python(py, &summary.to_json())
}

#[pymodule]
fn mdiqrng(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Certificate>()?;
    m.add_function(wrap_pyfunction!(guessing_probability, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_guessing_probability, m)?)?;
    m.add_function(wrap_pyfunction!(min_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(output_length, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_min_entropy_8, m)?)?;
    m.add_function(wrap_pyfunction!(extract, m)?)?;
    m.add_function(wrap_pyfunction!(proportion_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    m.add_function(wrap_pyfunction!(bits_to_image, m)?)?;
    m.add_function(wrap_pyfunction!(encode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(decode_frame, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
