//! Sampled paths: Brownian sampling, variation and quadratic (co)variation,
//! Riemann-Stieltjes and Stratonovich integrals, path statistics and the
//! scaled variation process used by the tightness diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, RollError};
use crate::rng::stream_rng;

/// Role tag of a sampled path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathRole {
    Deterministic,
    FiniteVariation,
    LocalMartingale,
    /// Continuous semimartingale with an explicit `A + M` split.
    Semimartingale,
}

impl PathRole {
    pub fn name(&self) -> &'static str {
        match self {
            PathRole::Deterministic => "deterministic",
            PathRole::FiniteVariation => "finite-variation",
            PathRole::LocalMartingale => "local-martingale",
            PathRole::Semimartingale => "semimartingale",
        }
    }

    /// Roles against which a Riemann-Stieltjes integral is legitimate.
    pub fn is_finite_variation(&self) -> bool {
        matches!(self, PathRole::Deterministic | PathRole::FiniteVariation)
    }
}

/// Nodewise `A`-part / `M`-part split of a semimartingale path.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub a_values: Vec<DVector<f64>>,
    pub m_values: Vec<DVector<f64>>,
}

/// A path sampled on a strictly increasing time grid starting at 0.
#[derive(Debug, Clone)]
pub struct SampledPath {
    pub grid: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    pub role: PathRole,
    pub decomposition: Option<Decomposition>,
}

/// Maximum nodewise mismatch allowed between `value` and `A + M`.
const DECOMPOSITION_TOL: f64 = 1e-12;

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(RollError::Grid("empty grid".into()));
    }
    if grid[0] != 0.0 {
        return Err(RollError::Grid(format!("grid must start at 0, got {}", grid[0])));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(RollError::Grid(format!(
                "grid not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl SampledPath {
    pub fn new(grid: Vec<f64>, values: Vec<DVector<f64>>, role: PathRole) -> Result<Self> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(RollError::Grid(format!(
                "{} values on a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        if role == PathRole::Semimartingale {
            return Err(RollError::MissingDecomposition);
        }
        Ok(Self {
            grid,
            values,
            role,
            decomposition: None,
        })
    }

    /// Semimartingale path with an explicit decomposition; checks
    /// `value = A + M` nodewise.
    pub fn new_semimartingale(
        grid: Vec<f64>,
        values: Vec<DVector<f64>>,
        decomposition: Decomposition,
    ) -> Result<Self> {
        check_grid(&grid)?;
        if values.len() != grid.len()
            || decomposition.a_values.len() != grid.len()
            || decomposition.m_values.len() != grid.len()
        {
            return Err(RollError::Grid("decomposition length mismatch".into()));
        }
        for (k, value) in values.iter().enumerate() {
            let gap = (&decomposition.a_values[k] + &decomposition.m_values[k] - value).norm();
            if gap > DECOMPOSITION_TOL {
                return Err(RollError::Grid(format!(
                    "A + M differs from the path by {gap:.3e} at node {k}"
                )));
            }
        }
        Ok(Self {
            grid,
            values,
            role: PathRole::Semimartingale,
            decomposition: Some(decomposition),
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn value_dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    pub fn end_time(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Largest grid spacing.
    pub fn mesh(&self) -> f64 {
        self.grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Piecewise-linear evaluation (exact at nodes).
    pub fn at(&self, t: f64) -> Result<DVector<f64>> {
        let (lo, hi) = (self.grid[0], self.end_time());
        if t < lo - 1e-12 || t > hi + 1e-12 {
            return Err(RollError::Range { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        let k = match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok(self.values[k].clone()),
            Err(k) => k - 1,
        };
        let (t0, t1) = (self.grid[k], self.grid[k + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(&self.values[k] * (1.0 - w) + &self.values[k + 1] * w)
    }

    /// The `A`-part as a finite-variation path (trivial for non-decomposed
    /// roles: the path itself when finite variation, zero when martingale).
    pub fn finite_variation_part(&self) -> Result<Vec<DVector<f64>>> {
        match self.role {
            PathRole::Semimartingale => Ok(self
                .decomposition
                .as_ref()
                .ok_or(RollError::MissingDecomposition)?
                .a_values
                .clone()),
            PathRole::LocalMartingale => {
                Ok(vec![DVector::zeros(self.value_dim()); self.len()])
            }
            _ => Ok(self.values.clone()),
        }
    }

    /// The `M`-part, by the same conventions.
    pub fn martingale_part(&self) -> Result<Vec<DVector<f64>>> {
        match self.role {
            PathRole::Semimartingale => Ok(self
                .decomposition
                .as_ref()
                .ok_or(RollError::MissingDecomposition)?
                .m_values
                .clone()),
            PathRole::LocalMartingale => Ok(self.values.clone()),
            _ => Ok(vec![DVector::zeros(self.value_dim()); self.len()]),
        }
    }
}

/// Matrix-valued sampled path (quadratic variations, integrand matrices).
#[derive(Debug, Clone)]
pub struct MatrixPath {
    pub grid: Vec<f64>,
    pub values: Vec<DMatrix<f64>>,
}

impl MatrixPath {
    pub fn new(grid: Vec<f64>, values: Vec<DMatrix<f64>>) -> Result<Self> {
        check_grid(&grid)?;
        if values.len() != grid.len() {
            return Err(RollError::Grid("matrix path length mismatch".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Builds the path `t_k -> f(t_k)` from a matrix-valued function.
    pub fn from_fn(grid: &[f64], f: impl Fn(f64) -> DMatrix<f64>) -> Result<Self> {
        Self::new(grid.to_vec(), grid.iter().map(|&t| f(t)).collect())
    }

    /// Total variation in the operator norm up to `t` (cumulative at `t`).
    pub fn operator_norm_variation(&self, t: f64) -> Result<f64> {
        let (lo, hi) = (self.grid[0], *self.grid.last().unwrap());
        if t < lo - 1e-12 || t > hi + 1e-12 {
            return Err(RollError::Range { t, lo, hi });
        }
        let mut acc = 0.0;
        for k in 0..self.len() - 1 {
            if self.grid[k + 1] > t + 1e-12 {
                break;
            }
            acc += operator_norm(&(&self.values[k + 1] - &self.values[k]));
        }
        Ok(acc)
    }
}

/// Spectral norm via singular values (matrices here are small).
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Uniform grid `0, h, 2h, ..., >= t` (last node clipped to exactly `t`).
pub fn uniform_grid(t: f64, h: f64) -> Result<Vec<f64>> {
    if t <= 0.0 || h <= 0.0 {
        return Err(RollError::Parameter(format!("need t > 0 and h > 0, got t = {t}, h = {h}")));
    }
    let n = (t / h).round().max(1.0) as usize;
    let mut grid: Vec<f64> = (0..=n).map(|k| k as f64 * t / n as f64).collect();
    *grid.last_mut().unwrap() = t;
    Ok(grid)
}

/// Samples a scaled Brownian path `sqrt(eps) W` on the grid: increments are
/// independent Gaussians with covariance `eps (t_{k+1} - t_k) I_m`.
/// Deterministic under the seed; `eps = 0` gives the zero path.
pub fn sample_brownian(m: usize, grid: &[f64], eps: f64, seed: u64) -> Result<SampledPath> {
    sample_brownian_stream(m, grid, eps, seed, 0)
}

/// Stream-indexed variant for parallel ensembles.
pub fn sample_brownian_stream(
    m: usize,
    grid: &[f64],
    eps: f64,
    seed: u64,
    stream: u64,
) -> Result<SampledPath> {
    if eps < 0.0 {
        return Err(RollError::Parameter(format!("eps must be >= 0, got {eps}")));
    }
    check_grid(grid)?;
    let mut rng = stream_rng(seed, stream);
    let mut values = Vec::with_capacity(grid.len());
    values.push(DVector::zeros(m));
    for w in grid.windows(2) {
        let sd = (eps * (w[1] - w[0])).sqrt();
        let step = DVector::from_fn(m, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
        let prev = values.last().unwrap();
        values.push(prev + step);
    }
    SampledPath::new(grid.to_vec(), values, PathRole::LocalMartingale)
}

/// Total variation of the path up to `t`: the sum of `|increment|` over grid
/// cells, with the last partial cell linearly interpolated. Exact for
/// piecewise-linear paths.
pub fn total_variation(p: &SampledPath, t: f64) -> Result<f64> {
    let (lo, hi) = (p.grid[0], p.end_time());
    if t < lo - 1e-12 || t > hi + 1e-12 {
        return Err(RollError::Range { t, lo, hi });
    }
    let mut acc = 0.0;
    for k in 0..p.len() - 1 {
        if p.grid[k + 1] <= t {
            acc += (&p.values[k + 1] - &p.values[k]).norm();
        } else {
            if p.grid[k] < t {
                let w = (t - p.grid[k]) / (p.grid[k + 1] - p.grid[k]);
                acc += (&p.values[k + 1] - &p.values[k]).norm() * w;
            }
            break;
        }
    }
    Ok(acc)
}

fn locate_node(grid: &[f64], t: f64) -> Result<usize> {
    for (k, &g) in grid.iter().enumerate() {
        if (g - t).abs() <= 1e-12 * (1.0 + t.abs()) {
            return Ok(k);
        }
    }
    Err(RollError::GridMismatch(format!("{t} is not a grid node")))
}

/// Partition sums `sum_i dX dX^T` cumulated at the partition nodes, which
/// must be nodes of the path's grid. Symmetric by construction.
pub fn quadratic_variation(p: &SampledPath, partition: &[f64]) -> Result<MatrixPath> {
    check_grid(partition)?;
    let m = p.value_dim();
    let idx: Vec<usize> = partition
        .iter()
        .map(|&t| locate_node(&p.grid, t))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(partition.len());
    let mut acc = DMatrix::zeros(m, m);
    values.push(acc.clone());
    for w in idx.windows(2) {
        let dx = &p.values[w[1]] - &p.values[w[0]];
        acc += &dx * dx.transpose();
        values.push(acc.clone());
    }
    MatrixPath::new(partition.to_vec(), values)
}

/// Signed partition sum `S = sum_i dX_i dY_i` of two scalar paths over their
/// shared grid (the discrete covariation bracket at the end time).
pub fn covariation_sum(x: &SampledPath, y: &SampledPath) -> Result<f64> {
    same_grid(x, y)?;
    if x.value_dim() != 1 || y.value_dim() != 1 {
        return Err(RollError::Parameter("covariation_sum expects scalar paths".into()));
    }
    let mut s = 0.0;
    for k in 0..x.len() - 1 {
        s += (x.values[k + 1][0] - x.values[k][0]) * (y.values[k + 1][0] - y.values[k][0]);
    }
    Ok(s)
}

/// Mean of `|S|` over `replicas` independent Brownian pairs on the grid.
/// For independent paths the value is bounded by `3 sqrt(mesh * t)` (three
/// standard deviations of the partition sum).
pub fn covariation_independence_check(
    replicas: usize,
    grid: &[f64],
    seed: u64,
) -> Result<f64> {
    if replicas < 100 {
        return Err(RollError::Parameter(format!(
            "need at least 100 replicas, got {replicas}"
        )));
    }
    let mut acc = 0.0;
    for r in 0..replicas {
        let x = sample_brownian_stream(1, grid, 1.0, seed, 2 * r as u64)?;
        let w = sample_brownian_stream(1, grid, 1.0, seed, 2 * r as u64 + 1)?;
        acc += covariation_sum(&x, &w)?.abs();
    }
    Ok(acc / replicas as f64)
}

fn same_grid(a: &SampledPath, b: &SampledPath) -> Result<()> {
    if a.len() != b.len() {
        return Err(RollError::GridMismatch(format!(
            "{} vs {} nodes",
            a.len(),
            b.len()
        )));
    }
    for (x, y) in a.grid.iter().zip(b.grid.iter()) {
        if (x - y).abs() > 1e-12 * (1.0 + x.abs()) {
            return Err(RollError::GridMismatch(format!("node {x} vs {y}")));
        }
    }
    Ok(())
}

fn integral_grids(f: &MatrixPath, y: &SampledPath) -> Result<()> {
    if f.len() != y.len() {
        return Err(RollError::GridMismatch(format!(
            "integrand has {} nodes, integrator {}",
            f.len(),
            y.len()
        )));
    }
    for (a, b) in f.grid.iter().zip(y.grid.iter()) {
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(RollError::GridMismatch(format!("node {a} vs {b}")));
        }
    }
    let n = y.value_dim();
    if f.values[0].ncols() != n {
        return Err(RollError::Parameter(format!(
            "integrand is {} x {}, integrator has dimension {}",
            f.values[0].nrows(),
            f.values[0].ncols(),
            n
        )));
    }
    Ok(())
}

/// Left-point Riemann-Stieltjes integral `sum f(t_i) (y(t_{i+1}) - y(t_i))`,
/// cumulated on the grid. The integrator must be of finite variation.
pub fn stieltjes_integral(f: &MatrixPath, y: &SampledPath) -> Result<SampledPath> {
    if !y.role.is_finite_variation() {
        return Err(RollError::WrongIntegralKind(format!(
            "Riemann-Stieltjes integral against a {} path; use stratonovich_integral",
            y.role.name()
        )));
    }
    integral_grids(f, y)?;
    let d = f.values[0].nrows();
    let mut values = Vec::with_capacity(y.len());
    let mut acc = DVector::zeros(d);
    values.push(acc.clone());
    for k in 0..y.len() - 1 {
        let dy = &y.values[k + 1] - &y.values[k];
        acc += &f.values[k] * dy;
        values.push(acc.clone());
    }
    SampledPath::new(y.grid.clone(), values, PathRole::FiniteVariation)
}

/// Stratonovich integral by midpoint sums
/// `sum (f(t_i) + f(t_{i+1}))/2 (y(t_{i+1}) - y(t_i))`, cumulated on the grid.
pub fn stratonovich_integral(f: &MatrixPath, y: &SampledPath) -> Result<SampledPath> {
    integral_grids(f, y)?;
    let d = f.values[0].nrows();
    let mut values = Vec::with_capacity(y.len());
    let mut acc = DVector::zeros(d);
    values.push(acc.clone());
    for k in 0..y.len() - 1 {
        let dy = &y.values[k + 1] - &y.values[k];
        let mid = (&f.values[k] + &f.values[k + 1]) * 0.5;
        acc += mid * dy;
        values.push(acc.clone());
    }
    let role = match y.role {
        PathRole::Semimartingale => PathRole::LocalMartingale,
        r => r,
    };
    SampledPath::new(y.grid.clone(), values, role)
}

/// Uniform norm `sup_{t <= T} |x(t)|` over grid nodes.
pub fn sup_norm(p: &SampledPath, t: f64) -> Result<f64> {
    let (lo, hi) = (p.grid[0], p.end_time());
    if t < lo - 1e-12 || t > hi + 1e-12 {
        return Err(RollError::Range { t, lo, hi });
    }
    Ok(p
        .grid
        .iter()
        .zip(&p.values)
        .take_while(|(g, _)| **g <= t + 1e-12)
        .map(|(_, v)| v.norm())
        .fold(0.0, f64::max))
}

/// Modulus of continuity `sup_{|t-s| <= rho, t,s <= T} |x(t) - x(s)|` over
/// grid nodes.
pub fn modulus_of_continuity(p: &SampledPath, t: f64, rho: f64) -> Result<f64> {
    if rho <= 0.0 {
        return Err(RollError::Parameter(format!("rho must be positive, got {rho}")));
    }
    let (lo, hi) = (p.grid[0], p.end_time());
    if t < lo - 1e-12 || t > hi + 1e-12 {
        return Err(RollError::Range { t, lo, hi });
    }
    let n = p.grid.iter().take_while(|&&g| g <= t + 1e-12).count();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            if p.grid[j] - p.grid[i] > rho + 1e-12 {
                break;
            }
            worst = worst.max((&p.values[j] - &p.values[i]).norm());
        }
    }
    Ok(worst)
}

/// The increasing process `G_t = |V(A)|_t + (1/eps) |<M, M>|_t` of a
/// decomposed semimartingale, where `|<M, M>|` is the total variation of the
/// quadratic-variation matrix path in the operator norm. Pure
/// finite-variation and pure martingale paths use their trivial splits;
/// a semimartingale role must carry its decomposition.
pub fn g_process(y: &SampledPath, eps: f64) -> Result<SampledPath> {
    if eps <= 0.0 {
        return Err(RollError::Parameter(format!("eps must be positive, got {eps}")));
    }
    let a = y.finite_variation_part()?;
    let m = y.martingale_part()?;
    let n = y.len();
    let dim = y.value_dim();
    // Operator-norm variation of the quadratic-variation matrix path,
    // evaluated on blocks of ~N^(3/4) increments. Rank-one per-increment
    // cells would sum to the trace instead; aggregated blocks concentrate
    // around eps * dt * I, whose operator norm reproduces the scaled time.
    // The small-sample bias of the block operator norm is ~ 1.25 / sqrt(K).
    let block = ((n - 1) as f64).powf(0.75).ceil().max(1.0) as usize;
    let mut values = Vec::with_capacity(n);
    let mut var_a = 0.0;
    let mut committed = 0.0;
    let mut partial = DMatrix::zeros(dim, dim);
    values.push(DVector::from_element(1, 0.0));
    for k in 0..n - 1 {
        var_a += (&a[k + 1] - &a[k]).norm();
        let dm = &m[k + 1] - &m[k];
        partial += &dm * dm.transpose();
        let q_here = committed + operator_norm(&partial);
        values.push(DVector::from_element(1, var_a + q_here / eps));
        if (k + 1) % block == 0 {
            committed = q_here;
            partial.fill(0.0);
        }
    }
    SampledPath::new(y.grid.clone(), values, PathRole::FiniteVariation)
}
