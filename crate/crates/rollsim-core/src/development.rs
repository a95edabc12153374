//! Cartan development and its stochastic variants on the orthonormal frame
//! bundle: rolling the manifold along a Euclidean curve, with optional
//! twisting noise in the fiber, plus the inverse operations (horizontal lift
//! and anti-development) and the projection to the base manifold.
//!
//! Conventions: a frame is the matrix whose columns are the frame vectors,
//! and the horizontal vector field moves the base with `dx = E xi` while the
//! frame columns are parallel-transported. Twisting acts by right
//! multiplication on the frame and never moves the base point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RollError};
use crate::geometry::{Manifold, ManifoldPoint, OrthonormalFrame};
use crate::paths::{PathRole, SampledPath};
use crate::rotation::{integrate_rotation_from, RotationPath, SkewBasis};

/// Frame-bundle path: one orthonormal frame per grid node.
#[derive(Debug, Clone)]
pub struct FramePath {
    pub grid: Vec<f64>,
    pub frames: Vec<OrthonormalFrame>,
    /// Largest orthonormality defect observed before per-step
    /// re-orthonormalization.
    pub max_raw_defect: f64,
}

impl FramePath {
    /// Recomputes the largest nodewise orthonormality defect of the stored
    /// (corrected) frames.
    pub fn max_defect(&self, manifold: &Manifold) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for f in &self.frames {
            worst = worst.max(manifold.frame_defect(f)?);
        }
        Ok(worst)
    }
}

/// Base-manifold path.
#[derive(Debug, Clone)]
pub struct ManifoldPath {
    pub grid: Vec<f64>,
    pub points: Vec<ManifoldPoint>,
}

/// Output of [`develop_decomposed`]: the de-twisted horizontal lift, the
/// fiber rotation, and their product.
#[derive(Debug, Clone)]
pub struct DecomposedDevelopment {
    pub xtilde: FramePath,
    pub rotation: RotationPath,
    pub frame_path: FramePath,
}

/// Drops the frames of a frame path.
pub fn project(path: &FramePath) -> ManifoldPath {
    ManifoldPath {
        grid: path.grid.clone(),
        points: path.frames.iter().map(|f| f.base.clone()).collect(),
    }
}

/// Sums Riemannian segment lengths of a base path, with the metric evaluated
/// at the left endpoint of each segment (ambient chords on the sphere,
/// minimal-image increments on the torus). Converges to the curve length at
/// first order in the mesh.
pub fn trace_length(manifold: &Manifold, path: &ManifoldPath) -> Result<f64> {
    let mut acc = 0.0;
    for k in 0..path.points.len().saturating_sub(1) {
        let dx = point_increment(manifold, &path.points[k], &path.points[k + 1]);
        match manifold {
            Manifold::Sphere { .. } => acc += dx.norm(),
            _ => {
                let g = manifold.metric_at(&path.points[k])?;
                acc += (dx.transpose() * g * &dx)[(0, 0)].max(0.0).sqrt();
            }
        }
    }
    Ok(acc)
}

/// Coordinate increment between consecutive points, unwrapping the torus to
/// the minimal image.
fn point_increment(manifold: &Manifold, a: &ManifoldPoint, b: &ManifoldPoint) -> DVector<f64> {
    let mut dx = &b.coords - &a.coords;
    if let Manifold::FlatTorus { period, .. } = manifold {
        for c in dx.iter_mut() {
            *c = *c - (*c / period).round() * period;
        }
    }
    dx
}

/// State advanced by the horizontal flow: base coordinates and frame matrix.
fn horizontal_field(
    manifold: &Manifold,
    x: &DVector<f64>,
    e: &DMatrix<f64>,
    xi: &DVector<f64>,
    time: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let v = e * xi;
    match manifold {
        Manifold::Flat { .. } | Manifold::FlatTorus { .. } => {
            Ok((v, DMatrix::zeros(e.nrows(), e.ncols())))
        }
        Manifold::Sphere { .. } => {
            // Parallel transport on the sphere: de_m = -(v . e_m) x.
            let de = -x * (v.transpose() * e);
            Ok((v, de))
        }
        _ => {
            let p = ManifoldPoint::new(x.clone());
            manifold.check_point(&p, time)?;
            let gamma = manifold.christoffel_at(&p)?;
            let d = manifold.dim();
            // W_{il} = Gamma^i_{jl} v^j, then de = -W e.
            let mut w = DMatrix::zeros(d, d);
            for (i, gi) in gamma.iter().enumerate() {
                let row = v.transpose() * gi;
                w.set_row(i, &row.row(0));
            }
            Ok((v, -(w * e)))
        }
    }
}

/// One RK4 step of the horizontal flow `u' = H_xi(u)` of size `h`, followed
/// by base canonicalization and polar re-orthonormalization of the frame.
/// Returns the new frame and the orthonormality defect observed before the
/// correction.
pub fn horizontal_step(
    manifold: &Manifold,
    u: &OrthonormalFrame,
    xi: &DVector<f64>,
    h: f64,
) -> Result<(OrthonormalFrame, f64)> {
    let x0 = &u.base.coords;
    let e0 = &u.frame;
    let t = f64::NAN;

    let (k1x, k1e) = horizontal_field(manifold, x0, e0, xi, t)?;
    let (k2x, k2e) = horizontal_field(
        manifold,
        &(x0 + &k1x * (h / 2.0)),
        &(e0 + &k1e * (h / 2.0)),
        xi,
        t,
    )?;
    let (k3x, k3e) = horizontal_field(
        manifold,
        &(x0 + &k2x * (h / 2.0)),
        &(e0 + &k2e * (h / 2.0)),
        xi,
        t,
    )?;
    let (k4x, k4e) = horizontal_field(manifold, &(x0 + &k3x * h), &(e0 + &k3e * h), xi, t)?;

    let x = x0 + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
    let e = e0 + (k1e + k2e * 2.0 + k3e * 2.0 + k4e) * (h / 6.0);

    let mut point = ManifoldPoint::new(x);
    manifold.canonicalize(&mut point);
    let mut out = OrthonormalFrame::new(point, e);
    let raw_defect = manifold.frame_defect(&out)?;
    manifold.reorthonormalize(&mut out)?;
    Ok((out, raw_defect))
}

fn check_driver_dim(manifold: &Manifold, gamma: &SampledPath) -> Result<()> {
    if gamma.value_dim() != manifold.dim() {
        return Err(RollError::Parameter(format!(
            "driver dimension {} does not match manifold dimension {}",
            gamma.value_dim(),
            manifold.dim()
        )));
    }
    Ok(())
}

fn check_same_grid(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(RollError::GridMismatch(format!(
            "{} vs {} nodes",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.iter().zip(b.iter()) {
        if (x - y).abs() > 1e-12 * (1.0 + x.abs()) {
            return Err(RollError::GridMismatch(format!("node {x} vs {y}")));
        }
    }
    Ok(())
}

fn domain_time(err: RollError, time: f64) -> RollError {
    match err {
        RollError::Domain { detail, .. } => RollError::Domain { time, detail },
        e => e,
    }
}

/// Cartan development: rolls the manifold along the finite-variation curve
/// `gamma`, producing the frame-bundle solution of `u' = H_{gamma'}(u)`
/// over `gamma`'s grid.
pub fn develop(manifold: &Manifold, u0: &OrthonormalFrame, gamma: &SampledPath) -> Result<FramePath> {
    if !gamma.role.is_finite_variation() {
        return Err(RollError::PathRole {
            expected: "finite-variation or deterministic",
            got: gamma.role.name().into(),
        });
    }
    develop_inner(manifold, u0, gamma, None, Twist::None)
}

/// Stochastic development: per step, a horizontal substep with the increment
/// of `gamma` followed by an exact vertical substep that right-multiplies the
/// frame by `exp(sum_a A_a dw^a)` (Lie-Trotter splitting; the fiber motion is
/// exact and the base is untouched by the vertical factor).
pub fn stochastic_develop(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    gamma: &SampledPath,
    twist: &SampledPath,
) -> Result<FramePath> {
    let basis = SkewBasis::new(manifold.dim())?;
    check_same_grid(&gamma.grid, &twist.grid)?;
    if twist.value_dim() != basis.len() {
        return Err(RollError::Parameter(format!(
            "twist driver has {} components, so(d) needs {}",
            twist.value_dim(),
            basis.len()
        )));
    }
    develop_inner(manifold, u0, gamma, Some((twist, &basis)), Twist::PerStep)
}

#[derive(Clone, Copy, PartialEq)]
enum Twist {
    /// No vertical motion.
    None,
    /// Vertical exponential applied to the frame after each horizontal step.
    PerStep,
}

fn develop_inner(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    gamma: &SampledPath,
    twist: Option<(&SampledPath, &SkewBasis)>,
    mode: Twist,
) -> Result<FramePath> {
    check_driver_dim(manifold, gamma)?;
    manifold.check_point(&u0.base, gamma.grid[0])?;
    let mut frames = Vec::with_capacity(gamma.len());
    frames.push(u0.clone());
    let mut max_raw: f64 = 0.0;
    for k in 0..gamma.len() - 1 {
        let h = gamma.grid[k + 1] - gamma.grid[k];
        let xi = (&gamma.values[k + 1] - &gamma.values[k]) / h;
        let (mut next, raw) = horizontal_step(manifold, frames.last().unwrap(), &xi, h)
            .map_err(|e| domain_time(e, gamma.grid[k + 1]))?;
        max_raw = max_raw.max(raw);
        if mode == Twist::PerStep {
            let (w, basis) = twist.unwrap();
            let dw = &w.values[k + 1] - &w.values[k];
            let rot = crate::rotation::skew_expm(&basis.combine(&dw)?)?;
            next = next.rotated(&rot);
        }
        frames.push(next);
    }
    Ok(FramePath {
        grid: gamma.grid.clone(),
        frames,
        max_raw_defect: max_raw,
    })
}

/// Development through the fiber decomposition: integrates the rotation
/// `g' = g A_a o dw^a` exactly per step, drives the de-twisted lift by
/// `dx~ = H_i(x~) g^i_j o dgamma^j` with the midpoint (Stratonovich) value of
/// `g`, and recovers the full frame path as `u = x~ g` nodewise.
pub fn develop_decomposed(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    gamma: &SampledPath,
    twist: &SampledPath,
) -> Result<DecomposedDevelopment> {
    develop_decomposed_from(manifold, u0, gamma, twist, None)
}

/// [`develop_decomposed`] with an explicit initial rotation `g_0`, which acts
/// as a constant twist applied before any motion.
pub fn develop_decomposed_from(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    gamma: &SampledPath,
    twist: &SampledPath,
    g0: Option<&DMatrix<f64>>,
) -> Result<DecomposedDevelopment> {
    check_driver_dim(manifold, gamma)?;
    check_same_grid(&gamma.grid, &twist.grid)?;
    let basis = SkewBasis::new(manifold.dim())?;
    let rotation = integrate_rotation_from(twist, &basis, g0)?;

    let mut frames = Vec::with_capacity(gamma.len());
    frames.push(u0.clone());
    let mut max_raw: f64 = 0.0;
    for k in 0..gamma.len() - 1 {
        let h = gamma.grid[k + 1] - gamma.grid[k];
        let g_mid = (&rotation.values[k] + &rotation.values[k + 1]) * 0.5;
        let xi = g_mid * (&gamma.values[k + 1] - &gamma.values[k]) / h;
        let (next, raw) = horizontal_step(manifold, frames.last().unwrap(), &xi, h)
            .map_err(|e| domain_time(e, gamma.grid[k + 1]))?;
        max_raw = max_raw.max(raw);
        frames.push(next);
    }
    let xtilde = FramePath {
        grid: gamma.grid.clone(),
        frames,
        max_raw_defect: max_raw,
    };
    let full = FramePath {
        grid: gamma.grid.clone(),
        frames: xtilde
            .frames
            .iter()
            .zip(&rotation.values)
            .map(|(f, g)| f.rotated(g))
            .collect(),
        max_raw_defect: max_raw,
    };
    Ok(DecomposedDevelopment {
        xtilde,
        rotation,
        frame_path: full,
    })
}

/// Solves the constraint `v = u_0 + H_i(v) g^i_j . y^j` forward: develops the
/// curve `y` through the rotation path `g` with left-point coupling
/// (Riemann-Stieltjes), as the action functionals use it. The exact inverse
/// of [`antidevelop_twisted`] up to integrator roundoff.
pub fn develop_with_rotation(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    y: &SampledPath,
    rotation: &RotationPath,
) -> Result<FramePath> {
    check_driver_dim(manifold, y)?;
    check_same_grid(&y.grid, &rotation.grid)?;
    let mut frames = Vec::with_capacity(y.len());
    frames.push(u0.clone());
    let mut max_raw: f64 = 0.0;
    for k in 0..y.len() - 1 {
        let h = y.grid[k + 1] - y.grid[k];
        let xi = &rotation.values[k] * (&y.values[k + 1] - &y.values[k]) / h;
        let (next, raw) = horizontal_step(manifold, frames.last().unwrap(), &xi, h)
            .map_err(|e| domain_time(e, y.grid[k + 1]))?;
        max_raw = max_raw.max(raw);
        frames.push(next);
    }
    Ok(FramePath {
        grid: y.grid.clone(),
        frames,
        max_raw_defect: max_raw,
    })
}

/// Chord length cap beyond which the frame map is not inverted.
const MAX_LIFT_STEP: f64 = 0.5;

/// Solves `xi` such that one horizontal step of size `h` from `u` lands on
/// `target`, by fixed-point refinement of the first-order solve
/// `E xi = dx / h`. Also returns the stepped frame.
fn solve_step_driver(
    manifold: &Manifold,
    u: &OrthonormalFrame,
    target: &ManifoldPoint,
    h: f64,
    index: usize,
) -> Result<(DVector<f64>, OrthonormalFrame, f64)> {
    let dx = point_increment(manifold, &u.base, target);
    let len = dx.norm();
    if len > MAX_LIFT_STEP {
        return Err(RollError::StepTooLarge { index, len });
    }
    let first_order = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        match manifold {
            Manifold::Sphere { .. } => Ok(u.frame.transpose() * rhs),
            _ => u
                .frame
                .clone()
                .lu()
                .solve(rhs)
                .ok_or(RollError::StepTooLarge { index, len }),
        }
    };
    let mut xi = first_order(&dx)? / h;
    let mut stepped = None;
    for _ in 0..4 {
        let (next, raw) = horizontal_step(manifold, u, &xi, h)?;
        let residual = point_increment(manifold, &next.base, target);
        let rnorm = residual.norm();
        stepped = Some((next, raw));
        if rnorm <= 1e-13 * (1.0 + len) {
            break;
        }
        xi += first_order(&residual)? / h;
    }
    let (frame, raw) = stepped.unwrap();
    Ok((xi, frame, raw))
}

/// Horizontal lift of a base path starting at `u0`: parallel-transports the
/// frame along the curve. Consecutive points must stay within the step cap
/// of the frame map.
pub fn horizontal_lift(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    x: &ManifoldPath,
) -> Result<FramePath> {
    let (frames, _, max_raw) = lift_inner(manifold, u0, x, None)?;
    Ok(FramePath {
        grid: x.grid.clone(),
        frames,
        max_raw_defect: max_raw,
    })
}

/// Anti-development: recovers the Euclidean driver `y` of a base path, so
/// that developing `y` from `u0` reproduces the path within integrator
/// tolerance.
pub fn antidevelop(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    x: &ManifoldPath,
) -> Result<SampledPath> {
    let (_, y, _) = lift_inner(manifold, u0, x, None)?;
    SampledPath::new(x.grid.clone(), y, PathRole::FiniteVariation)
}

/// Anti-development through a rotation path: `dy = g^{-1} E^{-1} dx`, the
/// left-point inverse of [`develop_with_rotation`].
pub fn antidevelop_twisted(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    x: &ManifoldPath,
    rotation: &RotationPath,
) -> Result<SampledPath> {
    check_same_grid(&x.grid, &rotation.grid)?;
    let (_, y, _) = lift_inner(manifold, u0, x, Some(rotation))?;
    SampledPath::new(x.grid.clone(), y, PathRole::FiniteVariation)
}

/// Consistency diagnostic of the two stochastic schemes: rolls the curve
/// `t -> (cos t - 1, sin t)` with twisting noise of scale `eps` through both
/// [`stochastic_develop`] and [`develop_decomposed`] on three dyadic
/// refinements (strides 4, 2, 1 of the fine grid, coarse drivers being
/// restrictions of the fine ones), and returns the mean sup Riemannian
/// distance between the base traces per level, measured at the nodes shared
/// by all levels. The distances shrink at first order in the step.
pub fn scheme_gap_ladder(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    t: f64,
    h_fine: f64,
    eps: f64,
    seeds: u64,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let fine = crate::paths::uniform_grid(t, h_fine)?;
    let basis = SkewBasis::new(manifold.dim())?;
    let mut level_mean = vec![0.0; 3];
    for seed in 0..seeds {
        let w_fine =
            crate::paths::sample_brownian_stream(basis.len(), &fine, eps, master_seed, seed)?;
        for (lvl, stride) in [4usize, 2, 1].into_iter().enumerate() {
            let grid: Vec<f64> = fine.iter().step_by(stride).cloned().collect();
            let w = SampledPath::new(
                grid.clone(),
                w_fine.values.iter().step_by(stride).cloned().collect(),
                PathRole::LocalMartingale,
            )?;
            let gamma = SampledPath::new(
                grid.clone(),
                grid.iter()
                    .map(|&s| {
                        let mut v = DVector::zeros(manifold.dim());
                        v[0] = s.cos() - 1.0;
                        v[1] = s.sin();
                        v
                    })
                    .collect(),
                PathRole::FiniteVariation,
            )?;
            let a = project(&stochastic_develop(manifold, u0, &gamma, &w)?);
            let b = project(&develop_decomposed(manifold, u0, &gamma, &w)?.frame_path);
            let mut sup = 0.0_f64;
            for k in 0..grid.len() {
                if (k * stride) % 4 == 0 {
                    sup = sup.max(manifold.distance(&a.points[k], &b.points[k])?);
                }
            }
            level_mean[lvl] += sup;
        }
    }
    for v in level_mean.iter_mut() {
        *v /= seeds as f64;
    }
    Ok(level_mean)
}

/// Shared machinery of lift and anti-development. Returns the transported
/// frames, the recovered driver, and the worst raw defect.
#[allow(clippy::type_complexity)]
fn lift_inner(
    manifold: &Manifold,
    u0: &OrthonormalFrame,
    x: &ManifoldPath,
    rotation: Option<&RotationPath>,
) -> Result<(Vec<OrthonormalFrame>, Vec<DVector<f64>>, f64)> {
    if x.points.is_empty() {
        return Err(RollError::Grid("empty path".into()));
    }
    manifold.check_point(&u0.base, x.grid[0])?;
    let start_gap = point_increment(manifold, &u0.base, &x.points[0]).norm();
    if start_gap > 1e-9 {
        return Err(RollError::Parameter(format!(
            "path must start at the frame's base point (gap {start_gap:.3e})"
        )));
    }
    let d = manifold.dim();
    let mut frames = Vec::with_capacity(x.points.len());
    frames.push(u0.clone());
    let mut y = Vec::with_capacity(x.points.len());
    y.push(DVector::zeros(d));
    let mut max_raw: f64 = 0.0;
    for k in 0..x.points.len() - 1 {
        let h = x.grid[k + 1] - x.grid[k];
        let (xi, next, raw) =
            solve_step_driver(manifold, frames.last().unwrap(), &x.points[k + 1], h, k)
                .map_err(|e| domain_time(e, x.grid[k + 1]))?;
        max_raw = max_raw.max(raw);
        let mut dy = xi * h;
        if let Some(rot) = rotation {
            // Left-point rotation inverse; rotations are orthogonal.
            dy = rot.values[k].transpose() * dy;
        }
        let prev = y.last().unwrap().clone();
        y.push(prev + dy);
        frames.push(next);
    }
    Ok((frames, y, max_raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::{sample_brownian, uniform_grid};

    fn line_path(dir: &[f64], t: f64, h: f64) -> SampledPath {
        let grid = uniform_grid(t, h).unwrap();
        let v = DVector::from_row_slice(dir);
        let values = grid.iter().map(|&s| &v * s).collect();
        SampledPath::new(grid, values, PathRole::FiniteVariation).unwrap()
    }

    fn north_frame() -> (Manifold, OrthonormalFrame) {
        let m = Manifold::sphere(2);
        let u0 = OrthonormalFrame::new(
            ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        );
        (m, u0)
    }

    #[test]
    fn flat_development_reproduces_curve() {
        let m = Manifold::flat(2);
        let u0 = m
            .canonical_frame(&ManifoldPoint::from_slice(&[0.0, 0.0]))
            .unwrap();
        let grid = uniform_grid(1.0, 0.01).unwrap();
        let values: Vec<DVector<f64>> = grid
            .iter()
            .map(|&t| DVector::from_row_slice(&[(4.0 * t).sin(), t * t]))
            .collect();
        let gamma = SampledPath::new(grid, values.clone(), PathRole::FiniteVariation).unwrap();
        let u = develop(&m, &u0, &gamma).unwrap();
        let x = project(&u);
        for (p, v) in x.points.iter().zip(&values) {
            assert!((&p.coords - v).norm() < 1e-12);
        }
    }

    #[test]
    fn sphere_development_follows_great_circle() {
        let (m, u0) = north_frame();
        let gamma = line_path(&[1.0, 0.0], 2.0, 1e-3);
        let u = develop(&m, &u0, &gamma).unwrap();
        let x = project(&u);
        for (t, p) in x.grid.iter().zip(&x.points) {
            let expect = DVector::from_row_slice(&[t.sin(), 0.0, t.cos()]);
            assert!((&p.coords - expect).norm() < 1e-8, "at t = {t}");
        }
    }

    #[test]
    fn half_plane_development_hits_closed_form() {
        let m = Manifold::half_plane();
        let u0 = m
            .canonical_frame(&ManifoldPoint::from_slice(&[0.0, 1.0]))
            .unwrap();
        let gamma = line_path(&[1.0, 0.0], 1.0, 1e-3);
        let u = develop(&m, &u0, &gamma).unwrap();
        let x = project(&u);
        let end = &x.points.last().unwrap().coords;
        assert!((end[0] - 1.0_f64.tanh()).abs() < 1e-8);
        assert!((end[1] - 1.0 / 1.0_f64.cosh()).abs() < 1e-8);
    }

    #[test]
    fn zero_driver_is_stationary() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let gamma =
            SampledPath::new(grid.clone(), vec![DVector::zeros(2); grid.len()], PathRole::FiniteVariation)
                .unwrap();
        let u = develop(&m, &u0, &gamma).unwrap();
        for f in &u.frames {
            assert!((&f.base.coords - &u0.base.coords).norm() < 1e-15);
            assert!((&f.frame - &u0.frame).norm() < 1e-15);
        }
    }

    #[test]
    fn develop_rejects_martingale_driver() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let w = sample_brownian(2, &grid, 1.0, 3).unwrap();
        assert!(matches!(
            develop(&m, &u0, &w),
            Err(RollError::PathRole { .. })
        ));
    }

    #[test]
    fn stochastic_develop_zero_twist_matches_develop() {
        let (m, u0) = north_frame();
        let gamma = line_path(&[0.8, 0.6], 1.0, 1e-2);
        let zero_w = SampledPath::new(
            gamma.grid.clone(),
            vec![DVector::zeros(1); gamma.len()],
            PathRole::FiniteVariation,
        )
        .unwrap();
        let a = develop(&m, &u0, &gamma).unwrap();
        let b = stochastic_develop(&m, &u0, &gamma, &zero_w).unwrap();
        for (f, g) in a.frames.iter().zip(&b.frames) {
            assert!((&f.base.coords - &g.base.coords).norm() < 1e-14);
            assert!((&f.frame - &g.frame).norm() < 1e-14);
        }
    }

    #[test]
    fn pure_twist_fixes_base_and_rotates_frame() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-2).unwrap();
        let gamma = SampledPath::new(
            grid.clone(),
            vec![DVector::zeros(2); grid.len()],
            PathRole::FiniteVariation,
        )
        .unwrap();
        let w = sample_brownian(1, &grid, 0.5, 11).unwrap();
        let u = stochastic_develop(&m, &u0, &gamma, &w).unwrap();
        let basis = SkewBasis::new(2).unwrap();
        let rot = crate::rotation::integrate_rotation(&w, &basis).unwrap();
        for ((f, t), g) in u.frames.iter().zip(&u.grid).zip(&rot.values) {
            assert!((&f.base.coords - &u0.base.coords).norm() < 1e-13, "base moved at t = {t}");
            let expect = &u0.frame * g;
            assert!((&f.frame - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn structure_preserved_under_stochastic_development() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        for seed in 0..5 {
            let gamma = sample_brownian(2, &grid, 0.0, 0).unwrap(); // placeholder grid path
            let gamma = SampledPath::new(
                gamma.grid.clone(),
                grid.iter()
                    .map(|&t| DVector::from_row_slice(&[t.cos() - 1.0, t.sin()]))
                    .collect(),
                PathRole::FiniteVariation,
            )
            .unwrap();
            let w = sample_brownian(1, &grid, 0.2, seed).unwrap();
            let u = stochastic_develop(&m, &u0, &gamma, &w).unwrap();
            assert!(u.max_raw_defect <= 1e-9, "raw defect {}", u.max_raw_defect);
            assert!(u.max_defect(&m).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn small_twist_keeps_base_in_tube() {
        // The base trace stays within a tube around the untwisted trace of
        // radius controlled by the twist amplitude times the driver's
        // variation, and tightens as the noise fades.
        let (m, u0) = north_frame();
        let gamma = line_path(&[1.0, 0.0], 1.0, 1e-2);
        let plain = project(&develop(&m, &u0, &gamma).unwrap());
        let mut last_dev = f64::INFINITY;
        for eps in [1e-2, 1e-4] {
            let mut worst_ratio: f64 = 0.0;
            let mut worst_dev: f64 = 0.0;
            for seed in 0..5 {
                let w = sample_brownian(1, &gamma.grid, eps, seed).unwrap();
                let wsup = crate::paths::sup_norm(&w, 1.0).unwrap();
                let traced = project(&stochastic_develop(&m, &u0, &gamma, &w).unwrap());
                let dev = traced
                    .points
                    .iter()
                    .zip(&plain.points)
                    .map(|(a, b)| m.distance(a, b).unwrap())
                    .fold(0.0, f64::max);
                worst_ratio = worst_ratio.max(dev / (wsup * 1.0));
                worst_dev = worst_dev.max(dev);
            }
            assert!(worst_ratio <= 1.5, "tube ratio {worst_ratio} at eps {eps}");
            assert!(worst_dev < last_dev);
            last_dev = worst_dev;
        }
    }

    #[test]
    fn decomposition_projects_identically() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-2).unwrap();
        let gamma = SampledPath::new(
            grid.clone(),
            grid.iter()
                .map(|&t| DVector::from_row_slice(&[t, 0.5 * t * t]))
                .collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        let w = sample_brownian(1, &grid, 0.3, 17).unwrap();
        let dec = develop_decomposed(&m, &u0, &gamma, &w).unwrap();
        // Right multiplication fixes the base: u and x~ project identically.
        for (a, b) in dec.frame_path.frames.iter().zip(&dec.xtilde.frames) {
            assert_eq!(a.base.coords, b.base.coords);
        }
        // Zero twist: g = I and everything collapses to develop.
        let zero_w = SampledPath::new(
            grid.clone(),
            vec![DVector::zeros(1); grid.len()],
            PathRole::FiniteVariation,
        )
        .unwrap();
        let dec0 = develop_decomposed(&m, &u0, &gamma, &zero_w).unwrap();
        let plain = develop(&m, &u0, &gamma).unwrap();
        for (a, b) in dec0.frame_path.frames.iter().zip(&plain.frames) {
            assert!((&a.base.coords - &b.base.coords).norm() < 1e-13);
            assert!((&a.frame - &b.frame).norm() < 1e-13);
        }
        for g in &dec0.rotation.values {
            assert_eq!(*g, DMatrix::identity(2, 2));
        }
    }

    #[test]
    fn scheme_consistency_under_refinement() {
        // Splitting vs decomposition agree at first order: the sup distance
        // between base traces halves when the step halves. The distance is
        // measured at the nodes shared by all refinement levels, with the
        // coarse drivers as restrictions of the fine ones, and the halving
        // asserted up to a 0.1% measurement cushion (the schemes' difference
        // is first-order exactly, so the ratio concentrates at 2.0000).
        let (m, u0) = north_frame();
        let dists = scheme_gap_ladder(&m, &u0, 1.0, 2.5e-3, 0.5, 20, 0).unwrap();
        assert!(
            dists[1] <= dists[0] / 2.0 * 1.001 && dists[2] <= dists[1] / 2.0 * 1.001,
            "mean sup distances did not halve: {dists:?}"
        );
    }

    #[test]
    fn fiber_equivariance_under_initial_rotation() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-2).unwrap();
        let gamma = SampledPath::new(
            grid.clone(),
            grid.iter()
                .map(|&t| DVector::from_row_slice(&[t, (2.0 * t).sin()]))
                .collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        let w = sample_brownian(1, &grid, 0.4, 23).unwrap();
        let basis = SkewBasis::new(2).unwrap();
        let shift = DVector::from_row_slice(&[0.9]);
        let r = crate::rotation::skew_expm(&basis.combine(&shift).unwrap()).unwrap();
        // Shifting the twist driver at time zero is the same as starting from
        // the rotated frame.
        let shifted = develop_decomposed_from(&m, &u0, &gamma, &w, Some(&r)).unwrap();
        let rotated = develop_decomposed(&m, &u0.rotated(&r), &gamma, &w).unwrap();
        for (a, b) in shifted
            .frame_path
            .frames
            .iter()
            .zip(&rotated.frame_path.frames)
        {
            assert!((&a.base.coords - &b.base.coords).norm() < 1e-12);
        }
    }

    #[test]
    fn lift_and_antidevelop_round_trip() {
        let cases: Vec<(Manifold, ManifoldPoint)> = vec![
            (Manifold::flat(2), ManifoldPoint::from_slice(&[0.0, 0.0])),
            (Manifold::sphere(2), ManifoldPoint::from_slice(&[0.0, 0.0, 1.0])),
            (Manifold::half_plane(), ManifoldPoint::from_slice(&[0.0, 1.0])),
            (
                Manifold::flat_torus(2, std::f64::consts::TAU),
                ManifoldPoint::from_slice(&[0.1, 0.2]),
            ),
        ];
        for (m, x0) in cases {
            let u0 = m.canonical_frame(&x0).unwrap();
            let grid = uniform_grid(1.0, 1e-3).unwrap();
            let gamma = SampledPath::new(
                grid.clone(),
                grid.iter()
                    .map(|&t| DVector::from_row_slice(&[t, 0.3 * (3.0 * t).sin()]))
                    .collect(),
                PathRole::FiniteVariation,
            )
            .unwrap();
            let u = develop(&m, &u0, &gamma).unwrap();
            let x = project(&u);
            let y = antidevelop(&m, &u0, &x).unwrap();
            let sup = y
                .values
                .iter()
                .zip(&gamma.values)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(sup < 1e-8, "round trip error {sup} on {m:?}");
            // Lift recovers the developed frames.
            let lifted = horizontal_lift(&m, &u0, &x).unwrap();
            let frame_gap = lifted
                .frames
                .iter()
                .zip(&u.frames)
                .map(|(a, b)| (&a.frame - &b.frame).norm())
                .fold(0.0, f64::max);
            assert!(frame_gap < 1e-7, "lift frame gap {frame_gap} on {m:?}");
        }
    }

    #[test]
    fn antidevelop_geodesic_is_straight_line() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let speed = 0.7;
        let points: Vec<ManifoldPoint> = grid
            .iter()
            .map(|&t| {
                m.geodesic(&u0.base, &(u0.frame.column(0) * speed), t)
                    .unwrap()
            })
            .collect();
        let x = ManifoldPath { grid: grid.clone(), points };
        let y = antidevelop(&m, &u0, &x).unwrap();
        for (t, v) in y.grid.iter().zip(&y.values) {
            let expect = DVector::from_row_slice(&[speed * t, 0.0]);
            assert!((v - expect).norm() < 1e-8);
        }
    }

    #[test]
    fn constant_path_lifts_to_constant_frame() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 0.25).unwrap();
        let x = ManifoldPath {
            grid: grid.clone(),
            points: vec![u0.base.clone(); grid.len()],
        };
        let lifted = horizontal_lift(&m, &u0, &x).unwrap();
        for f in &lifted.frames {
            assert!((&f.frame - &u0.frame).norm() < 1e-14);
        }
        let y = antidevelop(&m, &u0, &x).unwrap();
        assert!(y.values.iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn twisted_develop_and_antidevelop_invert() {
        // The constraint map and its anti-development are exact inverses up
        // to the lift's fixed-point tolerance, for any rotation path.
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let y = SampledPath::new(
            grid.clone(),
            grid.iter()
                .map(|&t| DVector::from_row_slice(&[0.7 * t, 0.2 * (4.0 * t).sin()]))
                .collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        let f = sample_brownian(1, &grid, 0.4, 31).unwrap();
        let basis = SkewBasis::new(2).unwrap();
        let rot = crate::rotation::integrate_rotation(&f, &basis).unwrap();
        let v = develop_with_rotation(&m, &u0, &y, &rot).unwrap();
        let back = antidevelop_twisted(&m, &u0, &project(&v), &rot).unwrap();
        let sup = back
            .values
            .iter()
            .zip(&y.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(sup < 1e-9, "twisted round trip error {sup}");
    }

    #[test]
    fn chart_backend_develops_like_builtin() {
        // A user chart carrying the half-plane data drives the same rolling.
        use crate::geometry::ChartSpec;
        use std::sync::Arc;
        let chart = Manifold::chart(ChartSpec {
            dim: 2,
            metric: Arc::new(|x: &DVector<f64>| {
                nalgebra::DMatrix::identity(2, 2) / (x[1] * x[1])
            }),
            christoffel: Arc::new(|x: &DVector<f64>| {
                let y = x[1];
                let mut g1 = nalgebra::DMatrix::zeros(2, 2);
                let mut g2 = nalgebra::DMatrix::zeros(2, 2);
                g1[(0, 1)] = -1.0 / y;
                g1[(1, 0)] = -1.0 / y;
                g2[(0, 0)] = 1.0 / y;
                g2[(1, 1)] = -1.0 / y;
                vec![g1, g2]
            }),
        });
        let exact = Manifold::half_plane();
        let x0 = ManifoldPoint::from_slice(&[0.0, 1.0]);
        let u0c = chart.canonical_frame(&x0).unwrap();
        let u0e = exact.canonical_frame(&x0).unwrap();
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let gamma = SampledPath::new(
            grid.clone(),
            grid.iter()
                .map(|&t| DVector::from_row_slice(&[t, 0.3 * (2.0 * t).sin()]))
                .collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        let a = project(&develop(&chart, &u0c, &gamma).unwrap());
        let b = project(&develop(&exact, &u0e, &gamma).unwrap());
        let sup = a
            .points
            .iter()
            .zip(&b.points)
            .map(|(p, q)| (&p.coords - &q.coords).norm())
            .fold(0.0, f64::max);
        assert!(sup < 1e-12, "chart vs builtin development gap {sup}");
    }

    #[test]
    fn lift_requires_matching_start() {
        let (m, u0) = north_frame();
        let x = ManifoldPath {
            grid: vec![0.0, 0.1],
            points: vec![
                ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]),
                ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]),
            ],
        };
        assert!(matches!(
            horizontal_lift(&m, &u0, &x),
            Err(RollError::Parameter(_))
        ));
    }

    #[test]
    fn lift_rejects_oversized_steps() {
        let (m, u0) = north_frame();
        let x = ManifoldPath {
            grid: vec![0.0, 1.0],
            points: vec![
                u0.base.clone(),
                ManifoldPoint::from_slice(&[0.0, 0.0, -1.0]),
            ],
        };
        assert!(matches!(
            horizontal_lift(&m, &u0, &x),
            Err(RollError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn arc_length_identity_for_developments() {
        // Length of the trace equals the variation of the driver.
        let (m, u0) = north_frame();
        let gamma = line_path(&[0.6, 0.8], 2.0, 1e-4);
        let u = develop(&m, &u0, &gamma).unwrap();
        let len = trace_length(&m, &project(&u)).unwrap();
        let tv = crate::paths::total_variation(&gamma, 2.0).unwrap();
        assert!((len - tv).abs() < 1e-5, "len {len} vs tv {tv}");
    }

    #[test]
    fn arc_length_error_first_order_in_step() {
        let m = Manifold::half_plane();
        let u0 = m
            .canonical_frame(&ManifoldPoint::from_slice(&[0.0, 1.0]))
            .unwrap();
        let err_at = |h: f64| {
            let gamma = line_path(&[0.6, 0.8], 1.0, h);
            let u = develop(&m, &u0, &gamma).unwrap();
            let len = trace_length(&m, &project(&u)).unwrap();
            (len - crate::paths::total_variation(&gamma, 1.0).unwrap()).abs()
        };
        let (e1, e2) = (err_at(1e-3), err_at(5e-4));
        let ratio = e1 / e2;
        assert!((1.5..3.0).contains(&ratio), "errors {e1:.3e}/{e2:.3e}, ratio {ratio}");
    }

    #[test]
    fn trace_length_flat_is_euclidean() {
        let m = Manifold::flat(2);
        let grid = vec![0.0, 1.0, 2.0];
        let pts = vec![
            ManifoldPoint::from_slice(&[0.0, 0.0]),
            ManifoldPoint::from_slice(&[3.0, 4.0]),
            ManifoldPoint::from_slice(&[3.0, 4.0]),
        ];
        let x = ManifoldPath { grid, points: pts };
        assert!((trace_length(&m, &x).unwrap() - 5.0).abs() < 1e-14);
    }

    #[test]
    fn develop_reports_domain_exit_time() {
        // Steer the half-plane development into y <= 0.
        let m = Manifold::half_plane();
        let u0 = m
            .canonical_frame(&ManifoldPoint::from_slice(&[0.0, 0.05]))
            .unwrap();
        // A single huge step drives an RK4 stage below the boundary.
        let gamma = line_path(&[0.0, -100.0], 1.0, 0.5);
        match develop(&m, &u0, &gamma) {
            Err(RollError::Domain { time, .. }) => assert!(time > 0.0 && time <= 1.0),
            other => panic!("expected domain error, got {other:?}"),
        }
    }
}
