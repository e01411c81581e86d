//! Python bindings for the experiment drivers.
//!
//! The plain Rust functions below are what the extension module wraps; they take
//! and return simple values so both sides stay thin.

use cutmixed::harness::{
    compute_eoc, error_csv, run_dirichlet_convergence, run_equivalence_check, run_neumann_convergence, run_sparsity_study, ErrorRecord,
    ExperimentConfig, Geometry, PpKind, ERROR_HEADER, HARNESS_GP,
};

#[derive(Debug, thiserror::Error)]
pub enum BindingError {
    #[error("unknown post-processing '{0}' (expected none, element or patch)")]
    PostProcessing(String),
    #[error("unknown geometry '{0}' (expected ring or polygon)")]
    Geometry(String),
    #[error(transparent)]
    Core(#[from] cutmixed::Error),
}

pub type Result<T> = std::result::Result<T, BindingError>;

pub fn parse_pp(s: &str) -> Result<PpKind> {
    match s {
        "none" => Ok(PpKind::None),
        "element" => Ok(PpKind::Element),
        "patch" => Ok(PpKind::Patch),
        other => Err(BindingError::PostProcessing(other.into())),
    }
}

pub fn parse_geometry(s: &str) -> Result<Geometry> {
    match s {
        "ring" => Ok(Geometry::Ring),
        "polygon" => Ok(Geometry::Polygon),
        other => Err(BindingError::Geometry(other.into())),
    }
}

/// One row per level, columns as in [`ERROR_HEADER`].
pub type Row = (usize, usize, f64, String, [f64; 6]);

fn row(r: &ErrorRecord) -> Row {
    (
        r.level,
        r.k,
        r.gamma,
        r.pp.tag().to_string(),
        [r.u_l2, r.u_l2_bar, r.u_div, r.p_l2, r.p_inner_l2, r.ps_l2],
    )
}

pub fn header() -> Vec<String> {
    ERROR_HEADER.split(',').map(String::from).collect()
}

pub fn dirichlet(k: usize, levels: Vec<usize>, gamma_u: f64, pp: &str, geometry: &str) -> Result<Vec<Row>> {
    let cfg = ExperimentConfig::new(k, levels, gamma_u, parse_pp(pp)?, parse_geometry(geometry)?);
    Ok(run_dirichlet_convergence(&cfg)?.iter().map(row).collect())
}

pub fn neumann(k: usize, levels: Vec<usize>, gamma_u: f64, geometry: &str) -> Result<Vec<Row>> {
    let cfg = ExperimentConfig::new(k, levels, gamma_u, PpKind::Patch, parse_geometry(geometry)?);
    Ok(run_neumann_convergence(&cfg)?.iter().map(row).collect())
}

pub fn dirichlet_csv(k: usize, levels: Vec<usize>, gamma_u: f64, pp: &str, geometry: &str) -> Result<String> {
    let cfg = ExperimentConfig::new(k, levels, gamma_u, parse_pp(pp)?, parse_geometry(geometry)?);
    Ok(error_csv(&run_dirichlet_convergence(&cfg)?))
}

/// `(k, ndof flux, ndof scalar, nnz per dof for V1..V5)`.
pub type StripRow = (usize, usize, usize, [f64; 5]);

pub fn sparsity(kmax: usize) -> Result<Vec<StripRow>> {
    Ok(run_sparsity_study(kmax)?
        .into_iter()
        .map(|r| (r.k, r.ndof_flux, r.ndof_scalar, r.nnz_per_dof))
        .collect())
}

/// `(max relative u difference, max p difference away from the cut)`.
pub fn equivalence(k: usize, level: usize, gamma_u: f64, geometry: &str) -> Result<(f64, f64)> {
    let r = run_equivalence_check(parse_geometry(geometry)?, level, k, gamma_u, HARNESS_GP)?;
    Ok((r.u_rel_diff, r.p_far_diff))
}

pub fn eoc(errors: Vec<f64>) -> Vec<Option<f64>> {
    compute_eoc(&errors)
}

#[cfg(feature = "python")]
mod python {
    use pyo3::exceptions::{PyRuntimeError, PyValueError};
    use pyo3::prelude::*;

    use super::{BindingError, Row, StripRow};

    fn to_py(e: BindingError) -> PyErr {
        match e {
            BindingError::Core(inner) => PyRuntimeError::new_err(inner.to_string()),
            other => PyValueError::new_err(other.to_string()),
        }
    }

    #[pyfunction]
    fn header() -> Vec<String> {
        super::header()
    }

    #[pyfunction]
    #[pyo3(signature = (k, levels, gamma_u=1.0, pp="none", geometry="ring"))]
    fn dirichlet(k: usize, levels: Vec<usize>, gamma_u: f64, pp: &str, geometry: &str) -> PyResult<Vec<Row>> {
        super::dirichlet(k, levels, gamma_u, pp, geometry).map_err(to_py)
    }

    #[pyfunction]
    #[pyo3(signature = (k, levels, gamma_u=1.0, geometry="ring"))]
    fn neumann(k: usize, levels: Vec<usize>, gamma_u: f64, geometry: &str) -> PyResult<Vec<Row>> {
        super::neumann(k, levels, gamma_u, geometry).map_err(to_py)
    }

    #[pyfunction]
    #[pyo3(signature = (k, levels, gamma_u=1.0, pp="none", geometry="ring"))]
    fn dirichlet_csv(k: usize, levels: Vec<usize>, gamma_u: f64, pp: &str, geometry: &str) -> PyResult<String> {
        super::dirichlet_csv(k, levels, gamma_u, pp, geometry).map_err(to_py)
    }

    #[pyfunction]
    #[pyo3(signature = (kmax=3))]
    fn sparsity(kmax: usize) -> PyResult<Vec<StripRow>> {
        super::sparsity(kmax).map_err(to_py)
    }

    #[pyfunction]
    #[pyo3(signature = (k=1, level=1, gamma_u=1.0, geometry="ring"))]
    fn equivalence(k: usize, level: usize, gamma_u: f64, geometry: &str) -> PyResult<(f64, f64)> {
        super::equivalence(k, level, gamma_u, geometry).map_err(to_py)
    }

    #[pyfunction]
    fn eoc(errors: Vec<f64>) -> Vec<Option<f64>> {
        super::eoc(errors)
    }

    #[pymodule]
    fn cutmixed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
        m.add_function(wrap_pyfunction!(header, m)?)?;
        m.add_function(wrap_pyfunction!(dirichlet, m)?)?;
        m.add_function(wrap_pyfunction!(neumann, m)?)?;
        m.add_function(wrap_pyfunction!(dirichlet_csv, m)?)?;
        m.add_function(wrap_pyfunction!(sparsity, m)?)?;
        m.add_function(wrap_pyfunction!(equivalence, m)?)?;
        m.add_function(wrap_pyfunction!(eoc, m)?)?;
        m.add("__version__", env!("CARGO_PKG_VERSION"))?;
        Ok(())
    }
}
