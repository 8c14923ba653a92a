//! Python bindings: surfaces, fields, meshes, the finite element matrices,
//! the Ritz map, BDF coefficients and the configuration-driven commands.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use chsurf::assembly::Snapshot;
use chsurf::bdf::BdfScheme;
use chsurf::chsystem::{interpolate, ritz_map};
use chsurf::config::{ExperimentConfig, FieldConfig, SurfaceConfig};
use chsurf::diagnostics::field_error;
use chsurf::experiment::{cmd_converge, cmd_energy, cmd_mesh_info, cmd_run, cmd_theta, Outputs};
use chsurf::geometry::{AmbientField, LevelSet};
use chsurf::linsolve::SparseMatrix;
use chsurf::mesh::{evolve_mesh, icosphere, with_velocity, SurfaceMesh};

fn err(e: chsurf::Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(frozen)]
#[derive(Clone)]
struct Surface {
    config: SurfaceConfig,
    inner: Arc<dyn LevelSet>,
}

impl Surface {
    fn from_config(config: SurfaceConfig) -> Self {
        let inner = config.build();
        Surface { config, inner }
    }
}

#[pymethods]
impl Surface {
    #[staticmethod]
    fn sphere(radius: f64) -> PyResult<Self> {
        if !(radius > 0.0) {
            return Err(PyValueError::new_err("radius must be positive"));
        }
        Ok(Surface::from_config(SurfaceConfig::Sphere { radius }))
    }

    /// `x₁²/a(t) + x₂² + x₃² = R²` with `a(t) = 1 + amplitude·sin(2πt/period)`.
    #[staticmethod]
    fn ellipsoid(radius: f64, amplitude: f64, period: f64) -> PyResult<Self> {
        if !(radius > 0.0 && amplitude.abs() < 1.0 && period > 0.0) {
            return Err(PyValueError::new_err("need radius > 0, |amplitude| < 1, period > 0"));
        }
        Ok(Surface::from_config(SurfaceConfig::Ellipsoid {
            radius,
            amplitude,
            period,
        }))
    }

    fn value(&self, x: [f64; 3], t: f64) -> f64 {
        self.inner.value(&x.into(), t)
    }

    fn __repr__(&self) -> String {
        format!("Surface({:?})", self.config)
    }
}

#[pyclass(frozen)]
#[derive(Clone)]
struct Field {
    inner: Arc<dyn AmbientField>,
    label: String,
}

impl Field {
    fn from_config(config: FieldConfig) -> Self {
        Field {
            inner: config.build(),
            label: format!("{config:?}"),
        }
    }
}

#[pymethods]
impl Field {
    /// `e^{-rate·t} x₁x₂`.
    #[staticmethod]
    fn decaying_product(rate: f64) -> Self {
        Field::from_config(FieldConfig::DecayingProduct { rate })
    }

    #[staticmethod]
    fn cosine_product(amplitude: f64, wavenumber: f64) -> Self {
        Field::from_config(FieldConfig::CosineProduct { amplitude, wavenumber })
    }

    /// `scale · (x₁ + x₁²x₂²x₃)`.
    #[staticmethod]
    fn mixed_polynomial(scale: f64) -> Self {
        Field::from_config(FieldConfig::MixedPolynomial { scale })
    }

    #[staticmethod]
    fn constant(value: f64) -> Self {
        Field::from_config(FieldConfig::Constant { value })
    }

    fn value(&self, x: [f64; 3], t: f64) -> f64 {
        self.inner.value(&x.into(), t)
    }

    fn __repr__(&self) -> String {
        format!("Field({})", self.label)
    }
}

/// CSR triple `(indptr, indices, data)`, as accepted by `scipy.sparse.csr_matrix`.
type Csr = (Vec<usize>, Vec<usize>, Vec<f64>);

fn csr(a: &SparseMatrix) -> Csr {
    (a.row_ptr().to_vec(), a.col_idx().to_vec(), a.values().to_vec())
}

#[pyclass]
struct Mesh {
    surface: Surface,
    snapshot: Snapshot,
}

impl Mesh {
    fn new(surface: Surface, mesh: SurfaceMesh) -> PyResult<Self> {
        let snapshot = Snapshot::from_mesh(mesh).map_err(err)?;
        Ok(Mesh { surface, snapshot })
    }
}

#[pymethods]
impl Mesh {
    #[getter]
    fn nodes(&self) -> Vec<[f64; 3]> {
        self.snapshot.mesh.nodes.iter().map(|x| [x.x, x.y, x.z]).collect()
    }

    #[getter]
    fn elements(&self) -> Vec<[usize; 3]> {
        self.snapshot.mesh.elements.clone()
    }

    #[getter]
    fn time(&self) -> f64 {
        self.snapshot.mesh.time
    }

    fn node_count(&self) -> usize {
        self.snapshot.mesh.node_count()
    }

    fn area(&self) -> f64 {
        self.snapshot.mesh.area()
    }

    /// `(max_h, min_h, min_angle, max_angle, quasi_uniformity)`.
    fn quality(&self) -> (f64, f64, f64, f64, f64) {
        let q = self.snapshot.mesh.quality();
        (q.max_h, q.min_h, q.min_angle, q.max_angle, q.quasi_uniformity)
    }

    fn mass(&self) -> Csr {
        csr(&self.snapshot.mass)
    }

    fn stiffness(&self) -> Csr {
        csr(&self.snapshot.stiffness)
    }

    fn mass_derivative(&self) -> PyResult<Csr> {
        Ok(csr(&self.snapshot.mass_derivative().map_err(err)?))
    }

    /// The mesh moved along the surface velocity to time `t`.
    #[pyo3(signature = (t, substeps=1))]
    fn evolve(&self, t: f64, substeps: usize) -> PyResult<Mesh> {
        let moved = evolve_mesh(&self.snapshot.mesh, self.surface.inner.as_ref(), t, substeps.max(1)).map_err(err)?;
        Mesh::new(self.surface.clone(), moved)
    }

    fn interpolate(&self, field: &Field) -> Vec<f64> {
        interpolate(&self.snapshot, field.inner.as_ref())
    }

    /// Nodal values of the generalized Ritz map of `field`.
    fn ritz_map(&self, field: &Field) -> PyResult<Vec<f64>> {
        ritz_map(&self.snapshot, self.surface.inner.as_ref(), field.inner.as_ref()).map_err(err)
    }

    /// `(‖e‖_{L²}, ‖∇e‖_{L²})` of nodal values against `field`.
    fn error(&self, field: &Field, nodal: Vec<f64>) -> PyResult<(f64, f64)> {
        let (l2, grad) = field_error(&self.snapshot, self.surface.inner.as_ref(), field.inner.as_ref(), &nodal)
            .map_err(err)?;
        Ok((l2.sqrt(), grad.sqrt()))
    }
}

#[pyfunction]
#[pyo3(signature = (level, surface, t0=0.0))]
fn mesh(level: u32, surface: &Surface, t0: f64) -> PyResult<Mesh> {
    let m = icosphere(level, surface.config.radius(), surface.inner.as_ref(), t0).map_err(err)?;
    let m = with_velocity(&m, surface.inner.as_ref()).map_err(err)?;
    Mesh::new(surface.clone(), m)
}

/// `(δ, γ)` coefficient lists of the order-`order` method as floats.
#[pyfunction]
fn bdf_coefficients(order: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let s = BdfScheme::new(order).map_err(err)?;
    Ok((s.delta().to_vec(), s.gamma().to_vec()))
}

/// The same coefficients as `(numerator, denominator)` pairs.
#[pyfunction]
fn bdf_coefficients_exact(order: usize) -> PyResult<(Vec<(i64, i64)>, Vec<(i64, i64)>)> {
    let s = BdfScheme::new(order).map_err(err)?;
    let pairs = |v: &[num_rational::Ratio<i64>]| v.iter().map(|r| (*r.numer(), *r.denom())).collect();
    Ok((pairs(s.delta_rational()), pairs(s.gamma_rational())))
}

/// Validates a TOML config and returns its canonical form and hash.
#[pyfunction]
fn check_config(text: &str) -> PyResult<(String, String)> {
    let c = ExperimentConfig::from_toml(text).map_err(err)?;
    Ok((c.to_toml(), c.hash()))
}

/// Runs `command` (run, converge, energy, theta, mesh-info) on a TOML
/// config and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (text, command="run", output=None))]
fn run_config(py: Python<'_>, text: &str, command: &str, output: Option<std::path::PathBuf>) -> PyResult<String> {
    let config = ExperimentConfig::from_toml(text).map_err(err)?;
    let mut outputs = Outputs::from_config(&config);
    if let Some(dir) = output {
        outputs.directory = dir;
    }
    let command = command.to_string();
    let report = py.allow_threads(move || match command.as_str() {
        "run" => cmd_run(&config, &outputs),
        "converge" => cmd_converge(&config, &outputs),
        "energy" => cmd_energy(&config, &outputs),
        "theta" => cmd_theta(&config, &outputs),
        "mesh-info" => cmd_mesh_info(&config, &outputs),
        other => Err(chsurf::Error::config(format!("unknown command {other}"))),
    });
    Ok(report.map_err(err)?.to_json())
}

#[pymodule]
fn pychsurf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Surface>()?;
    m.add_class::<Field>()?;
    m.add_class::<Mesh>()?;
    m.add_function(wrap_pyfunction!(mesh, m)?)?;
    m.add_function(wrap_pyfunction!(bdf_coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(bdf_coefficients_exact, m)?)?;
    m.add_function(wrap_pyfunction!(check_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
