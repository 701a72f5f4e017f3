//! Python bindings: analytic bounds, PSF1 field files, the solver oracle and
//! the command-line entry point.

use std::path::PathBuf;

use num_complex::Complex64;
use phaseless::error::Error;
use phaseless::forward::analytic_bound as bound;
use phaseless::forward::oracle::born_oracle as born;
use phaseless::interface::cli::main_with_args;
use phaseless::interface::fieldfile::{FieldKind, RawField};
use pyo3::exceptions::{PyIOError, PyMemoryError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::ResourceRefused { .. } => PyMemoryError::new_err(e.to_string()),
        Error::NonConvergence { .. } | Error::NonFinite(_) | Error::Resolution(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Upper bound on the refractive contrast for `sphere_count` spheres of radius `r` at wavenumber `k`.
#[pyfunction]
#[pyo3(signature = (k, r, sphere_count = 1))]
fn analytic_bound(k: f64, r: f64, sphere_count: usize) -> PyResult<f64> {
    bound(k, r, sphere_count).map_err(to_py)
}

/// Reads a PSF1 file into a dict with `kind`, `dims`, `bbox` and flat `values`
/// (x1 fastest; complex fields give Python complex numbers).
#[pyfunction]
fn read_field<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let raw = RawField::read(&path).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("dims", raw.dims.to_vec())?;
    d.set_item("bbox", raw.bbox.to_vec())?;
    match raw.kind {
        FieldKind::Real => {
            d.set_item("kind", "real")?;
            d.set_item("values", raw.payload)?;
        }
        FieldKind::Complex => {
            d.set_item("kind", "complex")?;
            d.set_item("values", raw.values_complex())?;
        }
    }
    Ok(d)
}

fn write_raw(path: PathBuf, raw: RawField) -> PyResult<()> {
    // round-trip through the decoder so malformed shapes are rejected before touching disk
    let checked = RawField::decode(&raw.encode()).map_err(to_py)?;
    checked.write(&path).map_err(to_py)
}

#[pyfunction]
fn write_real_field(path: PathBuf, dims: [u64; 3], bbox: [f64; 6], values: Vec<f64>) -> PyResult<()> {
    write_raw(
        path,
        RawField {
            kind: FieldKind::Real,
            dims,
            bbox,
            payload: values,
        },
    )
}

#[pyfunction]
fn write_complex_field(path: PathBuf, dims: [u64; 3], bbox: [f64; 6], values: Vec<Complex64>) -> PyResult<()> {
    write_raw(
        path,
        RawField {
            kind: FieldKind::Complex,
            dims,
            bbox,
            payload: values.iter().flat_map(|v| [v.re, v.im]).collect(),
        },
    )
}

/// Volume solver against the first Born term at the given resolution.
#[pyfunction]
fn born_oracle<'py>(py: Python<'py>, points_per_wavelength: f64) -> PyResult<Bound<'py, PyDict>> {
    let row = born(points_per_wavelength).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("points_per_wavelength", row.points_per_wavelength)?;
    d.set_item("spacing", row.spacing)?;
    d.set_item("error", row.error)?;
    d.set_item("iterations", row.iterations)?;
    Ok(d)
}

/// Runs the command line with `args` (without the program name) and returns the exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("phaseless".to_string()).chain(args).collect();
    py.detach(|| main_with_args(argv))
}

#[pymodule]
fn phaseless_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(analytic_bound, m)?)?;
    m.add_function(wrap_pyfunction!(read_field, m)?)?;
    m.add_function(wrap_pyfunction!(write_real_field, m)?)?;
    m.add_function(wrap_pyfunction!(write_complex_field, m)?)?;
    m.add_function(wrap_pyfunction!(born_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
