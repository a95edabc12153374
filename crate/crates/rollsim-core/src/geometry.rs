//! Riemannian manifold backends: metric, Christoffel symbols, geodesics,
//! distances and orthonormal frames.
//!
//! Four built-in spaces carry closed-form Levi-Civita data and serve as exact
//! oracles: flat space, the unit sphere (kept extrinsically in ambient
//! coordinates to avoid chart switching), the hyperbolic half-plane and the
//! flat torus. A chart-based backend accepts user-supplied metric and
//! Christoffel callables for everything else.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RollError};

/// Metric callable of a chart backend: `x -> g_ij(x)`.
pub type MetricFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// Christoffel callable: `x -> [Gamma^i]_i` where `Gamma^i` is the d x d
/// matrix `Gamma^i_{jk}` over the lower indices.
pub type ChristoffelFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// A chart-based manifold: dimension plus metric and Christoffel callables.
///
/// The Christoffel symbols are taken directly rather than derived from the
/// metric by differentiation; consistency of the two is the caller's
/// responsibility and can be checked with [`Manifold::audit_chart`].
#[derive(Clone)]
pub struct ChartSpec {
    pub dim: usize,
    pub metric: MetricFn,
    pub christoffel: ChristoffelFn,
}

/// Manifold backend. Dimension is always the intrinsic dimension; the sphere
/// stores points in ambient coordinates (`dim + 1` components).
#[derive(Clone)]
pub enum Manifold {
    /// Euclidean space of dimension `dim`.
    Flat { dim: usize },
    /// Unit sphere of intrinsic dimension `dim`, embedded in `R^{dim+1}`.
    Sphere { dim: usize },
    /// Hyperbolic plane in the upper half-plane chart, metric
    /// `(dx^2+dy^2)/y^2` (constant curvature -1, so the Ricci curvature is
    /// bounded below).
    HalfPlane,
    /// Flat torus: Euclidean metric with coordinates wrapped modulo `period`.
    FlatTorus { dim: usize, period: f64 },
    /// User-supplied chart.
    Chart(ChartSpec),
}

impl fmt::Debug for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manifold::Flat { dim } => write!(f, "Flat({dim})"),
            Manifold::Sphere { dim } => write!(f, "Sphere({dim})"),
            Manifold::HalfPlane => write!(f, "HalfPlane"),
            Manifold::FlatTorus { dim, period } => write!(f, "FlatTorus({dim}, {period})"),
            Manifold::Chart(c) => write!(f, "Chart(dim={})", c.dim),
        }
    }
}

/// A point of the manifold in backend coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint {
    pub coords: DVector<f64>,
    /// Chart identifier; all built-in backends are single-chart (0).
    pub chart: u32,
}

impl ManifoldPoint {
    pub fn new(coords: DVector<f64>) -> Self {
        Self { coords, chart: 0 }
    }

    pub fn from_slice(coords: &[f64]) -> Self {
        Self::new(DVector::from_row_slice(coords))
    }
}

/// A base point together with `d` tangent vectors, orthonormal in the metric
/// at the base. Columns of `frame` are the frame vectors; for the embedded
/// sphere the matrix is `(d+1) x d` with columns tangent at the base.
#[derive(Debug, Clone)]
pub struct OrthonormalFrame {
    pub base: ManifoldPoint,
    pub frame: DMatrix<f64>,
}

impl OrthonormalFrame {
    pub fn new(base: ManifoldPoint, frame: DMatrix<f64>) -> Self {
        Self { base, frame }
    }

    /// Applies the frame to a vector of `R^d`, yielding a tangent vector in
    /// backend coordinates: `u(xi) = sum_k xi^k e_k`.
    pub fn apply(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.frame * xi
    }

    /// Right action of a `d x d` rotation on the frame; fixes the base point.
    pub fn rotated(&self, g: &DMatrix<f64>) -> Self {
        Self {
            base: self.base.clone(),
            frame: &self.frame * g,
        }
    }
}

impl Manifold {
    pub fn flat(dim: usize) -> Self {
        Manifold::Flat { dim }
    }

    /// Unit sphere `S^dim` in `R^{dim+1}`.
    pub fn sphere(dim: usize) -> Self {
        Manifold::Sphere { dim }
    }

    pub fn half_plane() -> Self {
        Manifold::HalfPlane
    }

    /// Flat torus with coordinates wrapped into `[0, period)`.
    pub fn flat_torus(dim: usize, period: f64) -> Self {
        Manifold::FlatTorus { dim, period }
    }

    pub fn chart(spec: ChartSpec) -> Self {
        Manifold::Chart(spec)
    }

    /// Intrinsic dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Flat { dim } | Manifold::FlatTorus { dim, .. } => *dim,
            Manifold::Sphere { dim } => *dim,
            Manifold::HalfPlane => 2,
            Manifold::Chart(c) => c.dim,
        }
    }

    /// Number of coordinates a point carries (`d`, or `d + 1` on the sphere).
    pub fn ambient_dim(&self) -> usize {
        match self {
            Manifold::Sphere { dim } => dim + 1,
            other => other.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Manifold::Flat { .. } => "flat",
            Manifold::Sphere { .. } => "sphere",
            Manifold::HalfPlane => "half-plane",
            Manifold::FlatTorus { .. } => "flat-torus",
            Manifold::Chart(_) => "chart",
        }
    }

    /// Checks domain membership (half-plane height, sphere radius, coordinate
    /// count). `time` is only used to report where a path operation failed.
    pub fn check_point(&self, x: &ManifoldPoint, time: f64) -> Result<()> {
        if x.coords.len() != self.ambient_dim() {
            return Err(RollError::Domain {
                time,
                detail: format!(
                    "expected {} coordinates, got {}",
                    self.ambient_dim(),
                    x.coords.len()
                ),
            });
        }
        match self {
            Manifold::HalfPlane => {
                if x.coords[1] <= 0.0 {
                    return Err(RollError::Domain {
                        time,
                        detail: format!("half-plane requires y > 0, got y = {}", x.coords[1]),
                    });
                }
            }
            Manifold::Sphere { .. } => {
                let r = x.coords.norm();
                if (r - 1.0).abs() > 1e-9 {
                    return Err(RollError::Domain {
                        time,
                        detail: format!("sphere point has |x| = {r}, expected 1"),
                    });
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Renormalizes a point onto the backend's canonical representation:
    /// sphere points to unit length, torus coordinates into `[0, period)`.
    pub fn canonicalize(&self, x: &mut ManifoldPoint) {
        match self {
            Manifold::Sphere { .. } => {
                let r = x.coords.norm();
                if r > 0.0 {
                    x.coords /= r;
                }
            }
            Manifold::FlatTorus { period, .. } => {
                for c in x.coords.iter_mut() {
                    *c = c.rem_euclid(*period);
                }
            }
            _ => {}
        }
    }

    /// Metric matrix `g_ij(x)`. Not exposed for the embedded sphere, whose
    /// inner product is the ambient one restricted to the tangent space.
    pub fn metric_at(&self, x: &ManifoldPoint) -> Result<DMatrix<f64>> {
        self.check_point(x, f64::NAN)?;
        let d = self.dim();
        match self {
            Manifold::Flat { .. } | Manifold::FlatTorus { .. } => Ok(DMatrix::identity(d, d)),
            Manifold::HalfPlane => {
                let y = x.coords[1];
                Ok(DMatrix::identity(2, 2) / (y * y))
            }
            Manifold::Sphere { .. } => Err(RollError::UnsupportedBackend {
                op: "metric_at",
                backend: "sphere (ambient inner product on tangent vectors)".into(),
            }),
            Manifold::Chart(c) => Ok((c.metric)(&x.coords)),
        }
    }

    /// Christoffel symbols `Gamma^i_{jk}(x)` for chart-style backends, as a
    /// vector of `d x d` matrices indexed by the upper index.
    pub fn christoffel_at(&self, x: &ManifoldPoint) -> Result<Vec<DMatrix<f64>>> {
        self.check_point(x, f64::NAN)?;
        let d = self.dim();
        match self {
            Manifold::Flat { .. } | Manifold::FlatTorus { .. } => {
                Ok(vec![DMatrix::zeros(d, d); d])
            }
            Manifold::HalfPlane => {
                let y = x.coords[1];
                let mut g1 = DMatrix::zeros(2, 2);
                let mut g2 = DMatrix::zeros(2, 2);
                g1[(0, 1)] = -1.0 / y;
                g1[(1, 0)] = -1.0 / y;
                g2[(0, 0)] = 1.0 / y;
                g2[(1, 1)] = -1.0 / y;
                Ok(vec![g1, g2])
            }
            Manifold::Sphere { .. } => Err(RollError::UnsupportedBackend {
                op: "christoffel_at",
                backend: "sphere".into(),
            }),
            Manifold::Chart(c) => Ok((c.christoffel)(&x.coords)),
        }
    }

    /// Inner product of two tangent vectors at `x`.
    pub fn inner(&self, x: &ManifoldPoint, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        match self {
            Manifold::Sphere { .. } => Ok(u.dot(v)),
            _ => {
                let g = self.metric_at(x)?;
                Ok((u.transpose() * g * v)[(0, 0)])
            }
        }
    }

    /// Geodesic from `x0` with initial tangent `v0`, evaluated at time `t`,
    /// using the default internal step for chart backends.
    pub fn geodesic(&self, x0: &ManifoldPoint, v0: &DVector<f64>, t: f64) -> Result<ManifoldPoint> {
        self.geodesic_with_step(x0, v0, t, 1e-3)
    }

    /// Geodesic with an explicit RK4 step for the chart backend; built-in
    /// spaces use closed forms and ignore `h`.
    pub fn geodesic_with_step(
        &self,
        x0: &ManifoldPoint,
        v0: &DVector<f64>,
        t: f64,
        h: f64,
    ) -> Result<ManifoldPoint> {
        self.check_point(x0, f64::NAN)?;
        match self {
            Manifold::Flat { .. } => Ok(ManifoldPoint::new(&x0.coords + v0 * t)),
            Manifold::FlatTorus { .. } => {
                let mut p = ManifoldPoint::new(&x0.coords + v0 * t);
                self.canonicalize(&mut p);
                Ok(p)
            }
            Manifold::Sphere { .. } => {
                let speed = v0.norm();
                if speed == 0.0 {
                    return Ok(x0.clone());
                }
                let dir = v0 / speed;
                let ang = speed * t;
                let mut p = ManifoldPoint::new(&x0.coords * ang.cos() + dir * ang.sin());
                self.canonicalize(&mut p);
                Ok(p)
            }
            Manifold::HalfPlane => Ok(half_plane_geodesic(x0, v0, t)),
            Manifold::Chart(_) => {
                if h <= 0.0 {
                    return Err(RollError::Parameter("geodesic step must be positive".into()));
                }
                self.geodesic_rk4(x0, v0, t, h)
            }
        }
    }

    /// RK4 integration of the geodesic equation `xdd^i = -Gamma^i_{jk} xd^j xd^k`.
    fn geodesic_rk4(
        &self,
        x0: &ManifoldPoint,
        v0: &DVector<f64>,
        t: f64,
        h: f64,
    ) -> Result<ManifoldPoint> {
        let n = (t.abs() / h).ceil().max(1.0) as usize;
        let dt = t / n as f64;
        let mut x = x0.coords.clone();
        let mut v = v0.clone();
        let accel = |x: &DVector<f64>, v: &DVector<f64>| -> Result<DVector<f64>> {
            let gam = self.christoffel_at(&ManifoldPoint::new(x.clone()))?;
            let mut a = DVector::zeros(x.len());
            for (i, gi) in gam.iter().enumerate() {
                a[i] = -(v.transpose() * gi * v)[(0, 0)];
            }
            Ok(a)
        };
        for _ in 0..n {
            let k1x = v.clone();
            let k1v = accel(&x, &v)?;
            let k2x = &v + &k1v * (dt / 2.0);
            let k2v = accel(&(&x + &k1x * (dt / 2.0)), &k2x)?;
            let k3x = &v + &k2v * (dt / 2.0);
            let k3v = accel(&(&x + &k2x * (dt / 2.0)), &k3x)?;
            let k4x = &v + &k3v * dt;
            let k4v = accel(&(&x + &k3x * dt), &k4x)?;
            x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
        }
        Ok(ManifoldPoint::new(x))
    }

    /// Riemannian distance; closed forms for the built-ins.
    pub fn distance(&self, a: &ManifoldPoint, b: &ManifoldPoint) -> Result<f64> {
        self.check_point(a, f64::NAN)?;
        self.check_point(b, f64::NAN)?;
        match self {
            Manifold::Flat { .. } => Ok((&a.coords - &b.coords).norm()),
            Manifold::FlatTorus { period, .. } => {
                let mut s = 0.0;
                for (x, y) in a.coords.iter().zip(b.coords.iter()) {
                    let mut d = (x - y).rem_euclid(*period);
                    if d > *period / 2.0 {
                        d = *period - d;
                    }
                    s += d * d;
                }
                Ok(s.sqrt())
            }
            Manifold::Sphere { .. } => {
                let c = a.coords.dot(&b.coords).clamp(-1.0, 1.0);
                Ok(c.acos())
            }
            Manifold::HalfPlane => {
                let (x1, y1) = (a.coords[0], a.coords[1]);
                let (x2, y2) = (b.coords[0], b.coords[1]);
                let q = 1.0 + ((x1 - x2).powi(2) + (y1 - y2).powi(2)) / (2.0 * y1 * y2);
                Ok(q.max(1.0).acosh())
            }
            Manifold::Chart(_) => Err(RollError::UnsupportedBackend {
                op: "distance",
                backend: "chart (use path lengths of supplied curves)".into(),
            }),
        }
    }

    /// Gram-Schmidt in the metric at `x`: orthonormalizes the columns of
    /// `cols` into a frame. Columns must be linearly independent (and tangent
    /// at `x` on the sphere, enforced by projection).
    pub fn gram_schmidt_frame(
        &self,
        x: &ManifoldPoint,
        cols: &DMatrix<f64>,
    ) -> Result<OrthonormalFrame> {
        self.check_point(x, f64::NAN)?;
        let d = self.dim();
        if cols.ncols() != d || cols.nrows() != self.ambient_dim() {
            return Err(RollError::Parameter(format!(
                "frame input must be {} x {}, got {} x {}",
                self.ambient_dim(),
                d,
                cols.nrows(),
                cols.ncols()
            )));
        }
        let mut work = cols.clone();
        if let Manifold::Sphere { .. } = self {
            // Project inputs to the tangent space first.
            let xn = &x.coords;
            for j in 0..d {
                let c = work.column(j).into_owned();
                let proj = &c - xn * xn.dot(&c);
                work.set_column(j, &proj);
            }
        }
        let mut frame = DMatrix::zeros(work.nrows(), d);
        for j in 0..d {
            let mut v = work.column(j).into_owned();
            for k in 0..j {
                let ek = frame.column(k).into_owned();
                let coef = self.inner(x, &ek, &v)?;
                v -= ek * coef;
            }
            let nrm = self.inner(x, &v, &v)?.sqrt();
            if !nrm.is_finite() || nrm < 1e-12 {
                return Err(RollError::DegenerateFrame);
            }
            frame.set_column(j, &(v / nrm));
        }
        Ok(OrthonormalFrame::new(x.clone(), frame))
    }

    /// Frame from a seeded random matrix, for when no preferred directions
    /// exist.
    pub fn random_frame(&self, x: &ManifoldPoint, seed: u64) -> Result<OrthonormalFrame> {
        let mut rng = crate::rng::stream_rng(seed, 0);
        let rows = self.ambient_dim();
        let d = self.dim();
        // Rejection on degeneracy is astronomically unlikely but cheap.
        for _ in 0..16 {
            let cols = DMatrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            match self.gram_schmidt_frame(x, &cols) {
                Ok(f) => return Ok(f),
                Err(RollError::DegenerateFrame) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(RollError::DegenerateFrame)
    }

    /// Identity-like canonical frame at `x`: Gram-Schmidt of the coordinate
    /// directions (for the sphere, of the first `d` ambient directions not
    /// parallel to `x`).
    pub fn canonical_frame(&self, x: &ManifoldPoint) -> Result<OrthonormalFrame> {
        let rows = self.ambient_dim();
        let d = self.dim();
        match self {
            Manifold::Sphere { .. } => {
                // Pick the d ambient axes least aligned with x.
                let mut idx: Vec<usize> = (0..rows).collect();
                idx.sort_by(|&i, &j| {
                    x.coords[i]
                        .abs()
                        .partial_cmp(&x.coords[j].abs())
                        .unwrap()
                });
                let mut cols = DMatrix::zeros(rows, d);
                for (j, &i) in idx.iter().take(d).enumerate() {
                    cols[(i, j)] = 1.0;
                }
                self.gram_schmidt_frame(x, &cols)
            }
            _ => self.gram_schmidt_frame(x, &DMatrix::identity(rows, d)),
        }
    }

    /// Orthonormality defect of a frame: `max(|E^T G E - I|_F, tangency)`.
    pub fn frame_defect(&self, u: &OrthonormalFrame) -> Result<f64> {
        let d = self.dim();
        match self {
            Manifold::Sphere { .. } => {
                let gram = u.frame.transpose() * &u.frame;
                let ortho = (gram - DMatrix::identity(d, d)).norm();
                let tang = (u.base.coords.transpose() * &u.frame).norm();
                Ok(ortho.max(tang))
            }
            _ => {
                let g = self.metric_at(&u.base)?;
                let gram = u.frame.transpose() * g * &u.frame;
                Ok((gram - DMatrix::identity(d, d)).norm())
            }
        }
    }

    /// Replaces the frame by the nearest metric-orthonormal one (polar
    /// decomposition), projecting sphere columns to the tangent space first.
    pub fn reorthonormalize(&self, u: &mut OrthonormalFrame) -> Result<()> {
        match self {
            Manifold::Sphere { .. } => {
                let xn = &u.base.coords;
                let proj = &u.frame - xn * (xn.transpose() * &u.frame);
                u.frame = polar_factor(&proj)?;
            }
            _ => {
                let g = self.metric_at(&u.base)?;
                let chol = g
                    .clone()
                    .cholesky()
                    .ok_or_else(|| RollError::Parameter("metric not positive definite".into()))?;
                let l = chol.l();
                let q = polar_factor(&(l.transpose() * &u.frame))?;
                // E' = L^{-T} Q so that E'^T G E' = I.
                u.frame = l
                    .transpose()
                    .lu()
                    .solve(&q)
                    .ok_or_else(|| RollError::Parameter("singular Cholesky factor".into()))?;
            }
        }
        Ok(())
    }

    /// Finite-difference audit of a chart backend: compares the supplied
    /// Christoffel symbols with the ones derived from the metric by central
    /// differences. Returns the max absolute discrepancy.
    pub fn audit_chart(&self, x: &ManifoldPoint, fd_step: f64) -> Result<f64> {
        let c = match self {
            Manifold::Chart(c) => c,
            _ => {
                return Err(RollError::UnsupportedBackend {
                    op: "audit_chart",
                    backend: self.kind_name().into(),
                })
            }
        };
        let d = c.dim;
        let g = (c.metric)(&x.coords);
        let ginv = g
            .clone()
            .try_inverse()
            .ok_or_else(|| RollError::Parameter("metric not invertible".into()))?;
        // dg[k] = d g_ij / d x^k by central differences
        let mut dg = Vec::with_capacity(d);
        for k in 0..d {
            let mut xp = x.coords.clone();
            let mut xm = x.coords.clone();
            xp[k] += fd_step;
            xm[k] -= fd_step;
            dg.push(((c.metric)(&xp) - (c.metric)(&xm)) / (2.0 * fd_step));
        }
        let supplied = (c.christoffel)(&x.coords);
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut s = 0.0;
                    for l in 0..d {
                        s += 0.5 * ginv[(i, l)] * (dg[j][(l, k)] + dg[k][(l, j)] - dg[l][(j, k)]);
                    }
                    worst = worst.max((s - supplied[i][(j, k)]).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// Closed-form unit-speed-extended geodesic of the upper half-plane.
fn half_plane_geodesic(x0: &ManifoldPoint, v0: &DVector<f64>, t: f64) -> ManifoldPoint {
    let (px, py) = (x0.coords[0], x0.coords[1]);
    let speed = (v0.norm_squared() / (py * py)).sqrt();
    if speed == 0.0 {
        return x0.clone();
    }
    let s = speed * t;
    let (vx, vy) = (v0[0], v0[1]);
    if vx.abs() < 1e-300 * py {
        // Vertical geodesic.
        let sign = vy.signum();
        return ManifoldPoint::from_slice(&[px, py * (sign * s).exp()]);
    }
    // Circle centered on the real axis through (px, py), Euclid-orthogonal to v0.
    let c = px + py * vy / vx;
    let r = ((px - c).powi(2) + py * py).sqrt();
    let s0 = ((px - c) / r).atanh();
    let arg = vx.signum() * s + s0;
    ManifoldPoint::from_slice(&[c + r * arg.tanh(), r / arg.cosh()])
}

/// Orthonormal polar factor of a (possibly tall) matrix via thin SVD.
pub(crate) fn polar_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(true, true);
    let (u, vt) = (
        svd.u.ok_or_else(|| RollError::Parameter("SVD failed".into()))?,
        svd.v_t
            .ok_or_else(|| RollError::Parameter("SVD failed".into()))?,
    );
    Ok(u * vt)
}
