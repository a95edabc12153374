//! Python bindings: manifolds, development, slipping schedules, action
//! functionals and rare-event scans. Vectors cross the boundary as plain
//! lists of floats.

use nalgebra::DVector;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rollsim_core::development as dev;
use rollsim_core::geometry::{Manifold as CoreManifold, ManifoldPoint, OrthonormalFrame};
use rollsim_core::ldp;
use rollsim_core::paths::{uniform_grid, PathRole, SampledPath};
use rollsim_core::rotation::SkewBasis;
use rollsim_core::slipping::{self, BaseCurve, JumpMeasureSpec};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn vec_to_dv(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

fn rows_to_path(grid: Vec<f64>, rows: Vec<Vec<f64>>) -> PyResult<SampledPath> {
    let values = rows.iter().map(|r| vec_to_dv(r)).collect();
    SampledPath::new(grid, values, PathRole::FiniteVariation).map_err(err)
}

fn path_to_rows(p: &SampledPath) -> Vec<Vec<f64>> {
    p.values.iter().map(|v| v.iter().copied().collect()).collect()
}

fn trace_to_rows(x: &dev::ManifoldPath) -> Vec<Vec<f64>> {
    x.points
        .iter()
        .map(|p| p.coords.iter().copied().collect())
        .collect()
}

/// A Riemannian manifold backend.
#[pyclass(frozen, name = "Manifold")]
struct PyManifold {
    inner: CoreManifold,
}

impl PyManifold {
    fn start_frame(&self, anchor: Option<&[f64]>) -> PyResult<OrthonormalFrame> {
        let x0 = match (&self.inner, anchor) {
            (_, Some(c)) => ManifoldPoint::from_slice(c),
            (CoreManifold::Sphere { dim }, None) => {
                let mut c = vec![0.0; dim + 1];
                c[*dim] = 1.0;
                ManifoldPoint::from_slice(&c)
            }
            (CoreManifold::HalfPlane, None) => ManifoldPoint::from_slice(&[0.0, 1.0]),
            (m, None) => ManifoldPoint::new(DVector::zeros(m.ambient_dim())),
        };
        self.inner.canonical_frame(&x0).map_err(err)
    }
}

#[pymethods]
impl PyManifold {
    /// Builds a built-in manifold: "flat", "sphere", "half-plane" or
    /// "flat-torus" (with an optional wrap period).
    #[new]
    #[pyo3(signature = (kind, dim, period=None))]
    fn new(kind: &str, dim: usize, period: Option<f64>) -> PyResult<Self> {
        let inner = match kind {
            "flat" => CoreManifold::flat(dim),
            "sphere" => CoreManifold::sphere(dim),
            "half-plane" => CoreManifold::half_plane(),
            "flat-torus" => {
                CoreManifold::flat_torus(dim, period.unwrap_or(std::f64::consts::TAU))
            }
            other => return Err(err(format!("unknown manifold kind {other:?}"))),
        };
        Ok(Self { inner })
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn kind(&self) -> String {
        self.inner.kind_name().to_string()
    }

    /// Geodesic point at time `t` from `x0` with initial tangent `v0`.
    fn geodesic(&self, x0: Vec<f64>, v0: Vec<f64>, t: f64) -> PyResult<Vec<f64>> {
        let p = self
            .inner
            .geodesic(&ManifoldPoint::from_slice(&x0), &vec_to_dv(&v0), t)
            .map_err(err)?;
        Ok(p.coords.iter().copied().collect())
    }

    fn distance(&self, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
        self.inner
            .distance(
                &ManifoldPoint::from_slice(&a),
                &ManifoldPoint::from_slice(&b),
            )
            .map_err(err)
    }

    fn metric_at(&self, x: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let g = self
            .inner
            .metric_at(&ManifoldPoint::from_slice(&x))
            .map_err(err)?;
        Ok((0..g.nrows())
            .map(|i| (0..g.ncols()).map(|j| g[(i, j)]).collect())
            .collect())
    }
}

/// Rolls the manifold along a sampled curve (Cartan development) and
/// returns the base trace, one coordinate row per grid node.
#[pyfunction]
#[pyo3(signature = (manifold, grid, curve, start=None))]
fn develop(
    manifold: &PyManifold,
    grid: Vec<f64>,
    curve: Vec<Vec<f64>>,
    start: Option<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let gamma = rows_to_path(grid, curve)?;
    let u0 = manifold.start_frame(start.as_deref())?;
    let frames = dev::develop(&manifold.inner, &u0, &gamma).map_err(err)?;
    Ok(trace_to_rows(&dev::project(&frames)))
}

/// Stochastic development: rolls along the curve with Brownian twisting
/// noise of scale `twist_eps`, seeded.
#[pyfunction]
#[pyo3(signature = (manifold, grid, curve, twist_eps, seed, start=None))]
fn roll(
    manifold: &PyManifold,
    grid: Vec<f64>,
    curve: Vec<Vec<f64>>,
    twist_eps: f64,
    seed: u64,
    start: Option<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let gamma = rows_to_path(grid, curve)?;
    let u0 = manifold.start_frame(start.as_deref())?;
    let basis = SkewBasis::new(manifold.inner.dim()).map_err(err)?;
    let w = rollsim_core::paths::sample_brownian(basis.len(), &gamma.grid, twist_eps, seed)
        .map_err(err)?;
    let frames = dev::stochastic_develop(&manifold.inner, &u0, &gamma, &w).map_err(err)?;
    Ok(trace_to_rows(&dev::project(&frames)))
}

/// Recovers the Euclidean driver of a manifold trace (anti-development).
#[pyfunction]
#[pyo3(signature = (manifold, grid, trace, start=None))]
fn antidevelop(
    manifold: &PyManifold,
    grid: Vec<f64>,
    trace: Vec<Vec<f64>>,
    start: Option<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let u0 = manifold.start_frame(start.as_deref())?;
    let x = dev::ManifoldPath {
        grid,
        points: trace
            .iter()
            .map(|r| ManifoldPoint::from_slice(r))
            .collect(),
    };
    let y = dev::antidevelop(&manifold.inner, &u0, &x).map_err(err)?;
    Ok(path_to_rows(&y))
}

/// Riemannian length of a sampled trace on the manifold.
#[pyfunction]
fn trace_length(manifold: &PyManifold, grid: Vec<f64>, trace: Vec<Vec<f64>>) -> PyResult<f64> {
    let x = dev::ManifoldPath {
        grid,
        points: trace
            .iter()
            .map(|r| ManifoldPoint::from_slice(r))
            .collect(),
    };
    dev::trace_length(&manifold.inner, &x).map_err(err)
}

/// Samples a scaled Brownian path; returns (grid, rows). Deterministic
/// under the seed.
#[pyfunction]
fn sample_brownian(
    m: usize,
    t: f64,
    h: f64,
    eps: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let grid = uniform_grid(t, h).map_err(err)?;
    let p = rollsim_core::paths::sample_brownian(m, &grid, eps, seed).map_err(err)?;
    Ok((p.grid.clone(), path_to_rows(&p)))
}

fn measure_by_name(name: &str, rate: Option<f64>, mean_jump: Option<f64>) -> PyResult<JumpMeasureSpec> {
    if name == "fixed" {
        return Ok(JumpMeasureSpec::fixed_exponential(
            rate.unwrap_or(2.0),
            mean_jump.unwrap_or(0.2),
        ));
    }
    JumpMeasureSpec::by_name(name).ok_or_else(|| err(format!("unknown measure {name:?}")))
}

/// Samples a compound-Poisson slipping schedule; returns (jump_times,
/// durations).
#[pyfunction]
#[pyo3(signature = (measure, eps, t, seed, rate=None, mean_jump=None))]
fn sample_schedule(
    measure: &str,
    eps: f64,
    t: f64,
    seed: u64,
    rate: Option<f64>,
    mean_jump: Option<f64>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let spec = measure_by_name(measure, rate, mean_jump)?;
    let s = slipping::sample_schedule(&spec, eps, t, seed).map_err(err)?;
    Ok((s.jump_times, s.durations))
}

/// Translational slipping of the unit circle along a sampled schedule;
/// returns (grid, rows) of the perturbed planar curve.
#[pyfunction]
#[pyo3(signature = (radius, jump_times, durations, t, h))]
fn slip_circle(
    radius: f64,
    jump_times: Vec<f64>,
    durations: Vec<f64>,
    t: f64,
    h: f64,
) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let curve = BaseCurve::circle(radius);
    let schedule = slipping::SlippingSchedule {
        jump_times,
        durations,
        horizon: t,
    };
    let grid = uniform_grid(t, h).map_err(err)?;
    let out = slipping::translational_slip(&curve, &schedule, &grid).map_err(err)?;
    Ok((out.grid.clone(), path_to_rows(&out)))
}

/// Condition table `eps * log int x nu^eps(dx)`; returns (rows, verdict).
#[pyfunction]
#[pyo3(signature = (measure, eps_grid, rate=None, mean_jump=None))]
fn mean_jump_table(
    measure: &str,
    eps_grid: Vec<f64>,
    rate: Option<f64>,
    mean_jump: Option<f64>,
) -> PyResult<(Vec<(f64, f64)>, bool)> {
    let spec = measure_by_name(measure, rate, mean_jump)?;
    let t = slipping::check_mean_jump_condition(&spec, &eps_grid).map_err(err)?;
    Ok((t.rows.iter().map(|r| (r.eps, r.value)).collect(), t.verdict))
}

/// Condition table `eps * rate(eps)`; returns (rows, verdict).
#[pyfunction]
#[pyo3(signature = (measure, eps_grid, rate=None, mean_jump=None))]
fn rate_divergence_table(
    measure: &str,
    eps_grid: Vec<f64>,
    rate: Option<f64>,
    mean_jump: Option<f64>,
) -> PyResult<(Vec<(f64, f64)>, bool)> {
    let spec = measure_by_name(measure, rate, mean_jump)?;
    let t = slipping::check_rate_divergence(&spec, &eps_grid).map_err(err)?;
    Ok((t.rows.iter().map(|r| (r.eps, r.value)).collect(), t.verdict))
}

/// Discrete H1 energy of a control path.
#[pyfunction]
fn h1_action(grid: Vec<f64>, values: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(ldp::h1_action(&rows_to_path(grid, values)?))
}

/// Drift action against a constant drift vector.
#[pyfunction]
fn drift_action(grid: Vec<f64>, values: Vec<Vec<f64>>, drift: Vec<f64>) -> PyResult<f64> {
    let b = vec_to_dv(&drift);
    let bound = b.norm();
    let field = slipping::DriftField::new(
        std::sync::Arc::new(move |_t, _x: &DVector<f64>| b.clone()),
        bound,
        0.0,
    );
    Ok(ldp::drift_action(&rows_to_path(grid, values)?, &field))
}

/// One scan row: (eps, hits, phat, ci_lo, ci_hi, eps_log_phat).
type ScanRowTuple = (f64, usize, f64, f64, f64, f64);

/// Rare-event scan of Brownian-perturbed rolling of a unit circle on the
/// manifold; returns one row tuple per noise scale.
#[pyfunction]
#[pyo3(signature = (manifold, eta, eps_grid, replicas, t, h, seed, twist=false))]
#[allow(clippy::too_many_arguments)]
fn rare_event_scan(
    manifold: &PyManifold,
    eta: f64,
    eps_grid: Vec<f64>,
    replicas: usize,
    t: f64,
    h: f64,
    seed: u64,
    twist: bool,
) -> PyResult<Vec<ScanRowTuple>> {
    let curve = BaseCurve::circle(1.0);
    let u0 = manifold.start_frame(None)?;
    let cfg = ldp::ScanConfig {
        mode: ldp::PerturbationMode::Brownian,
        twist,
        t,
        h,
        eta,
        eps_grid,
        replicas,
        seed,
    };
    let table = ldp::rare_event_scan(&manifold.inner, &curve, &u0, &cfg).map_err(err)?;
    Ok(table
        .rows
        .iter()
        .map(|r| (r.eps, r.hits, r.phat, r.ci_lo, r.ci_hi, r.eps_log_phat))
        .collect())
}

#[pymodule]
fn rollsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifold>()?;
    m.add_function(wrap_pyfunction!(develop, m)?)?;
    m.add_function(wrap_pyfunction!(roll, m)?)?;
    m.add_function(wrap_pyfunction!(antidevelop, m)?)?;
    m.add_function(wrap_pyfunction!(trace_length, m)?)?;
    m.add_function(wrap_pyfunction!(sample_brownian, m)?)?;
    m.add_function(wrap_pyfunction!(sample_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(slip_circle, m)?)?;
    m.add_function(wrap_pyfunction!(mean_jump_table, m)?)?;
    m.add_function(wrap_pyfunction!(rate_divergence_table, m)?)?;
    m.add_function(wrap_pyfunction!(h1_action, m)?)?;
    m.add_function(wrap_pyfunction!(drift_action, m)?)?;
    m.add_function(wrap_pyfunction!(rare_event_scan, m)?)?;
    Ok(())
}
