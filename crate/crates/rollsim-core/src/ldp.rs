//! Action functionals and empirical large-deviation probes: discrete
//! H1 energies, drift actions, indicator rates, rate evaluation for frame
//! and base paths by anti-development through candidate twists, exponential
//! tightness diagnostics, and seeded rare-event Monte Carlo scans.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::development::{
    antidevelop, develop, horizontal_lift, project, stochastic_develop, FramePath, ManifoldPath,
};
use crate::error::{Result, RollError};
use crate::geometry::{polar_factor, Manifold, OrthonormalFrame};
use crate::paths::{sample_brownian_stream, PathRole, SampledPath};
use crate::rng::cell_stream;
use crate::rotation::{integrate_rotation, rotation_log, SkewBasis};
use crate::slipping::{
    brownian_perturb_stream, inplace_slip, piecewise_linear_approx, sample_schedule_stream,
    translational_slip, BaseCurve, DriftField, JumpMeasureSpec,
};

/// A rate value: finite, or the infinite sentinel (serialized as the string
/// "inf" so files stay portable).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateValue {
    Finite(f64),
    Infinite,
}

impl RateValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, RateValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            RateValue::Finite(v) => Some(*v),
            RateValue::Infinite => None,
        }
    }
}

impl Serialize for RateValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RateValue::Finite(v) if v.is_nan() => s.serialize_str("nan"),
            RateValue::Finite(v) if v.is_infinite() => s.serialize_str("inf"),
            RateValue::Finite(v) => s.serialize_f64(*v),
            RateValue::Infinite => s.serialize_str("inf"),
        }
    }
}

/// Rate evaluation outcome: the value, its split into drift and twisting
/// energy, and the feasibility of the best candidate found.
#[derive(Debug, Clone, Serialize)]
pub struct ActionReport {
    pub total: RateValue,
    pub drift_part: f64,
    pub twist_part: f64,
    pub feasible: bool,
    /// Constraint residual of the reported candidate (frame mismatch for
    /// frame targets, base mismatch for base targets).
    pub residual: f64,
    pub tolerance: f64,
    pub converged: bool,
    pub evaluations: usize,
}

/// Candidate controls entering a rate functional: the slipping control `y`,
/// the twisting control `f`, and an optional second-order control that is
/// stored but never flowed.
#[derive(Debug, Clone)]
pub struct ControlBundle {
    pub y: SampledPath,
    pub f: SampledPath,
    pub q: Option<crate::paths::MatrixPath>,
}

impl ControlBundle {
    pub fn new(y: SampledPath, f: SampledPath, q: Option<crate::paths::MatrixPath>) -> Result<Self> {
        if f.values[0].norm() != 0.0 {
            return Err(RollError::Parameter("twist control must start at zero".into()));
        }
        let energy = h1_action(&f);
        if !energy.is_finite() {
            return Err(RollError::Parameter("twist control has infinite energy".into()));
        }
        Ok(Self { y, f, q })
    }
}

/// Discrete H1 energy `1/2 sum |df|^2 / dt`.
pub fn h1_action(f: &SampledPath) -> f64 {
    let mut acc = 0.0;
    for k in 0..f.len().saturating_sub(1) {
        let dt = f.grid[k + 1] - f.grid[k];
        acc += (&f.values[k + 1] - &f.values[k]).norm_squared() / dt;
    }
    0.5 * acc
}

/// Discrete drift action `1/2 sum |dy/dt - b(t, y)|^2 dt` with left-point
/// field evaluation.
pub fn drift_action(y: &SampledPath, b: &DriftField) -> f64 {
    let mut acc = 0.0;
    for k in 0..y.len().saturating_sub(1) {
        let dt = y.grid[k + 1] - y.grid[k];
        let rate = (&y.values[k + 1] - &y.values[k]) / dt;
        acc += (rate - b.eval(y.grid[k], &y.values[k])).norm_squared() * dt;
    }
    0.5 * acc
}

/// Indicator-type rate: zero when the discrete derivative of `y` matches the
/// curve's velocity in L2 up to `tol`, infinite otherwise.
pub fn indicator_rate(y: &SampledPath, gamma: &BaseCurve, tol: f64) -> Result<RateValue> {
    if tol <= 0.0 {
        return Err(RollError::Parameter(format!("tol must be positive, got {tol}")));
    }
    let mut acc = 0.0;
    for k in 0..y.len().saturating_sub(1) {
        let dt = y.grid[k + 1] - y.grid[k];
        let rate = (&y.values[k + 1] - &y.values[k]) / dt;
        acc += (rate - gamma.velocity(y.grid[k])).norm_squared() * dt;
    }
    if acc.sqrt() <= tol {
        Ok(RateValue::Finite(0.0))
    } else {
        Ok(RateValue::Infinite)
    }
}

/// Optimizer settings for the rate evaluations: projected finite-difference
/// gradient descent over a coarse control grid, step halving, fixed
/// evaluation budget.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Number of control nodes of the twist candidate (including t = 0).
    pub control_nodes: usize,
    /// Total evaluation budget.
    pub budget: usize,
    /// Initial line-search step.
    pub initial_step: f64,
    /// Finite-difference step.
    pub fd_step: f64,
    /// Feasibility tolerance on the constraint residual.
    pub feasibility_tol: f64,
    /// Optional initial twist candidate (resampled to the control grid).
    pub initial_twist: Option<SampledPath>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            control_nodes: 16,
            budget: 500,
            initial_step: 0.05,
            fd_step: 1e-4,
            feasibility_tol: 1e-6,
            initial_twist: None,
        }
    }
}

/// Shared state of one rate evaluation: the target base path lifted once,
/// so each twist candidate only costs a rotation integration and a
/// re-accumulation of the slipping control.
struct RateEvaluator<'a> {
    grid: Vec<f64>,
    /// Un-twisted driver increments recovered by the horizontal lift.
    dxi: Vec<DVector<f64>>,
    /// Lifted frames along the target base path.
    lift: Vec<OrthonormalFrame>,
    /// Frame component of the target when frames constrain feasibility.
    target_frames: Option<Vec<DMatrix<f64>>>,
    basis: SkewBasis,
    b: &'a DriftField,
}

struct Candidate {
    drift: f64,
    twist: f64,
    residual: f64,
}

impl<'a> RateEvaluator<'a> {
    fn new(
        manifold: &Manifold,
        u0: &OrthonormalFrame,
        x: &ManifoldPath,
        target_frames: Option<Vec<DMatrix<f64>>>,
        b: &'a DriftField,
    ) -> Result<Self> {
        let lifted = horizontal_lift(manifold, u0, x)?;
        let plain = antidevelop(manifold, u0, x)?;
        let dxi = (0..plain.len() - 1)
            .map(|k| &plain.values[k + 1] - &plain.values[k])
            .collect();
        Ok(Self {
            grid: x.grid.clone(),
            dxi,
            lift: lifted.frames,
            target_frames,
            basis: SkewBasis::new(manifold.dim())?,
            b,
        })
    }

    /// Recovers the twist driver implied by the target's frames, so the
    /// optimizer can start from a feasible point.
    fn recover_twist(&self) -> Result<SampledPath> {
        let dd = self.basis.len();
        let mut values = vec![DVector::zeros(dd)];
        match &self.target_frames {
            None => values = vec![DVector::zeros(dd); self.grid.len()],
            Some(frames) => {
                let mut prev_g: Option<DMatrix<f64>> = None;
                for (k, target) in frames.iter().enumerate() {
                    // g_k = nearest rotation with lift_k g = target_k.
                    let g = polar_factor(&(self.lift[k].frame.transpose() * target))?;
                    if let Some(p) = prev_g {
                        let step = rotation_log(&(p.transpose() * &g))?;
                        let df = self.basis.project(&step);
                        let last = values.last().unwrap().clone();
                        values.push(last + df);
                    } else if k > 0 {
                        unreachable!();
                    }
                    prev_g = Some(g);
                }
            }
        }
        SampledPath::new(self.grid.clone(), values, PathRole::FiniteVariation)
    }

    fn evaluate(&self, f_fine: &SampledPath) -> Result<Candidate> {
        let rot = integrate_rotation(f_fine, &self.basis)?;
        let d = self.basis.dim();
        let mut y_values = Vec::with_capacity(self.grid.len());
        y_values.push(DVector::zeros(d));
        for (k, dxi) in self.dxi.iter().enumerate() {
            let dy = rot.values[k].transpose() * dxi;
            let prev = y_values.last().unwrap().clone();
            y_values.push(prev + dy);
        }
        let y = SampledPath::new(self.grid.clone(), y_values, PathRole::FiniteVariation)?;
        let residual = match &self.target_frames {
            Some(frames) => frames
                .iter()
                .enumerate()
                .map(|(k, t)| (&self.lift[k].frame * &rot.values[k] - t).norm())
                .fold(0.0, f64::max),
            // Base reconstruction is exact by construction of the lift.
            None => 0.0,
        };
        Ok(Candidate {
            drift: drift_action(&y, self.b),
            twist: h1_action(f_fine),
            residual,
        })
    }
}

/// Piecewise-linear resampling of control-node values onto the fine grid.
fn controls_to_fine(
    control_times: &[f64],
    control_values: &[DVector<f64>],
    grid: &[f64],
) -> SampledPath {
    let mut values = Vec::with_capacity(grid.len());
    for &t in grid {
        let k = control_times
            .windows(2)
            .position(|w| t <= w[1] + 1e-12)
            .unwrap_or(control_times.len() - 2);
        let (t0, t1) = (control_times[k], control_times[k + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        values.push(&control_values[k] * (1.0 - w) + &control_values[k + 1] * w);
    }
    SampledPath::new(grid.to_vec(), values, PathRole::FiniteVariation).unwrap()
}

/// Downsamples a twist path onto the control grid, pinning f(0) = 0.
fn resample_controls(f: &SampledPath, control_times: &[f64]) -> Vec<DVector<f64>> {
    control_times
        .iter()
        .map(|&t| f.at(t.min(f.end_time())).unwrap_or_else(|_| DVector::zeros(f.value_dim())))
        .collect()
}

fn run_rate_optimizer(
    evaluator: &RateEvaluator,
    cfg: &OptimizerConfig,
) -> Result<ActionReport> {
    let grid = &evaluator.grid;
    let t_end = *grid.last().unwrap();
    let k_nodes = cfg.control_nodes.max(2);
    let control_times: Vec<f64> = (0..k_nodes)
        .map(|k| t_end * k as f64 / (k_nodes - 1) as f64)
        .collect();
    let dd = evaluator.basis.len();

    // Initial candidate: supplied twist, or the twist recovered from the
    // target's frames (zero for base targets).
    let initial = match &cfg.initial_twist {
        Some(f) => f.clone(),
        None => evaluator.recover_twist()?,
    };
    let mut controls = resample_controls(&initial, &control_times);
    controls[0] = DVector::zeros(dd);

    let mut evals = 0usize;
    let eval_controls = |ctrl: &Vec<DVector<f64>>, evals: &mut usize| -> Result<Candidate> {
        *evals += 1;
        let fine = controls_to_fine(&control_times, ctrl, grid);
        evaluator.evaluate(&fine)
    };

    let feasible_of = |c: &Candidate| c.residual <= cfg.feasibility_tol;
    let objective = |c: &Candidate| {
        if feasible_of(c) {
            c.drift + c.twist
        } else {
            f64::INFINITY
        }
    };

    let mut best = eval_controls(&controls, &mut evals)?;
    let mut best_controls = controls.clone();
    let mut step = cfg.initial_step;
    let mut converged = false;

    // If even the initial point is infeasible the descent cannot reject
    // against it; keep the initial candidate and report it as such.
    if objective(&best).is_finite() {
        'outer: while evals + (k_nodes - 1) * dd < cfg.budget {
            // Forward-difference gradient over the free control nodes.
            let f0 = objective(&best);
            let mut grad = vec![DVector::zeros(dd); k_nodes];
            let mut gnorm2 = 0.0;
            for node in 1..k_nodes {
                for a in 0..dd {
                    let mut probe = best_controls.clone();
                    probe[node][a] += cfg.fd_step;
                    let c = eval_controls(&probe, &mut evals)?;
                    let g = (objective(&c) - f0) / cfg.fd_step;
                    let g = if g.is_finite() { g } else { 0.0 };
                    grad[node][a] = g;
                    gnorm2 += g * g;
                }
            }
            if gnorm2.sqrt() < 1e-10 {
                converged = true;
                break;
            }
            // Line search with step halving.
            let mut improved = false;
            while step > 1e-12 {
                if evals >= cfg.budget {
                    break 'outer;
                }
                let probe: Vec<DVector<f64>> = best_controls
                    .iter()
                    .zip(&grad)
                    .map(|(c, g)| c - g * step)
                    .collect();
                let cand = eval_controls(&probe, &mut evals)?;
                if objective(&cand) < f0 - 1e-14 {
                    best = cand;
                    best_controls = probe;
                    improved = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                converged = true;
                break;
            }
        }
    }

    let feasible = feasible_of(&best);
    Ok(ActionReport {
        total: if feasible {
            RateValue::Finite(best.drift + best.twist)
        } else {
            RateValue::Infinite
        },
        drift_part: best.drift,
        twist_part: best.twist,
        feasible,
        residual: best.residual,
        tolerance: cfg.feasibility_tol,
        converged,
        evaluations: evals,
    })
}

/// Rate of a frame-bundle path: minimizes drift action plus twist energy
/// over twist candidates, with the slipping control forced by
/// anti-development of the target's base path through the candidate's
/// rotation. Feasibility compares the reconstructed frames against the
/// target's frames.
pub fn rate_of_frame_path(
    manifold: &Manifold,
    target: &FramePath,
    b: &DriftField,
    cfg: &OptimizerConfig,
) -> Result<ActionReport> {
    let x = project(target);
    let frames = target.frames.iter().map(|f| f.frame.clone()).collect();
    let evaluator = RateEvaluator::new(
        manifold,
        &target.frames[0],
        &x,
        Some(frames),
        b,
    )?;
    run_rate_optimizer(&evaluator, cfg)
}

/// Rate of a base-manifold path: the twisting freedom is part of the
/// minimization and feasibility compares base paths only (the contraction
/// of the frame-path rate onto the base).
pub fn rate_of_base_path(
    manifold: &Manifold,
    x: &ManifoldPath,
    u0: &OrthonormalFrame,
    b: &DriftField,
    cfg: &OptimizerConfig,
) -> Result<ActionReport> {
    let evaluator = RateEvaluator::new(manifold, u0, x, None, b)?;
    run_rate_optimizer(&evaluator, cfg)
}

/// One cell of a tightness diagnostic table.
#[derive(Debug, Clone, Serialize)]
pub struct TightnessCell {
    pub eps: f64,
    pub threshold: f64,
    pub replicas: usize,
    pub hits: usize,
    /// `eps log p_hat`, censored at `eps log (1/R)` when no path hit.
    pub value: f64,
    pub censored: bool,
}

/// Empirical exponential-tightness diagnostic over path ensembles.
#[derive(Debug, Clone, Serialize)]
pub struct TightnessTable {
    pub rho: f64,
    pub sup_norm: Vec<TightnessCell>,
    pub modulus: Vec<TightnessCell>,
    /// Values decrease along the threshold grids and (weakly) along
    /// shrinking epsilon.
    pub verdict: bool,
}

fn tightness_cells(
    ensembles: &[(f64, Vec<SampledPath>)],
    thresholds: &[f64],
    stat: impl Fn(&SampledPath) -> Result<f64>,
) -> Result<Vec<TightnessCell>> {
    let mut cells = Vec::new();
    for (eps, ensemble) in ensembles {
        let stats: Vec<f64> = ensemble.iter().map(&stat).collect::<Result<_>>()?;
        for &th in thresholds {
            let hits = stats.iter().filter(|&&s| s >= th).count();
            let r = ensemble.len();
            let (value, censored) = if hits == 0 {
                (eps * (1.0 / r as f64).ln(), true)
            } else {
                (eps * (hits as f64 / r as f64).ln(), false)
            };
            cells.push(TightnessCell {
                eps: *eps,
                threshold: th,
                replicas: r,
                hits,
                value,
                censored,
            });
        }
    }
    Ok(cells)
}

fn tightness_verdict(cells: &[TightnessCell], eps_count: usize, th_count: usize) -> bool {
    // Cells are laid out eps-major, threshold-minor, eps descending.
    let at = |i: usize, j: usize| &cells[i * th_count + j];
    let mut ok = true;
    for i in 0..eps_count {
        for j in 1..th_count {
            ok &= at(i, j).value <= at(i, j - 1).value + 1e-12;
        }
    }
    for j in 0..th_count {
        for i in 1..eps_count {
            ok &= at(i, j).value <= at(i - 1, j).value + 1e-12;
        }
    }
    ok
}

/// Tabulates `eps log P(sup-norm >= a)` and `eps log P(modulus >= eta)` over
/// ensembles of paths per epsilon (at least 1000 paths each). Zero-hit cells
/// report the Monte Carlo resolution floor `eps log(1/R)` as a censored
/// value.
pub fn tightness_diagnostic(
    ensembles: &[(f64, Vec<SampledPath>)],
    t: f64,
    a_grid: &[f64],
    eta_grid: &[f64],
    rho: f64,
) -> Result<TightnessTable> {
    if rho <= 0.0 {
        return Err(RollError::Parameter("rho must be positive".into()));
    }
    if ensembles.is_empty() || a_grid.is_empty() || eta_grid.is_empty() {
        return Err(RollError::Parameter("empty tightness configuration".into()));
    }
    for (eps, ensemble) in ensembles {
        if ensemble.len() < 1000 {
            return Err(RollError::Parameter(format!(
                "tightness diagnostic needs >= 1000 paths per eps, got {} at eps = {eps}",
                ensemble.len()
            )));
        }
    }
    let mut sorted: Vec<&(f64, Vec<SampledPath>)> = ensembles.iter().collect();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let owned: Vec<(f64, Vec<SampledPath>)> = sorted
        .into_iter()
        .map(|(e, v)| (*e, v.clone()))
        .collect();
    let sup_cells = tightness_cells(&owned, a_grid, |p| crate::paths::sup_norm(p, t))?;
    let mod_cells = tightness_cells(&owned, eta_grid, |p| {
        crate::paths::modulus_of_continuity(p, t, rho)
    })?;
    let verdict = tightness_verdict(&sup_cells, owned.len(), a_grid.len())
        && tightness_verdict(&mod_cells, owned.len(), eta_grid.len());
    Ok(TightnessTable {
        rho,
        sup_norm: sup_cells,
        modulus: mod_cells,
        verdict,
    })
}

/// Slipping mode of a rare-event scan.
#[derive(Debug, Clone)]
pub enum PerturbationMode {
    /// No slipping: the original curve is rolled (twisting only).
    None,
    Translational(JumpMeasureSpec),
    InPlace(JumpMeasureSpec),
    PiecewiseLinear(JumpMeasureSpec),
    /// The curve solves `dx = b dt + sqrt(eps) dB` with `b` the curve's own
    /// velocity field.
    Brownian,
}

/// Rare-event scan configuration.
#[derive(Debug, Clone)]
pub struct ScanConfig {
    pub mode: PerturbationMode,
    /// Apply twisting noise `sqrt(eps) W` in the fiber.
    pub twist: bool,
    pub t: f64,
    pub h: f64,
    /// Deviation threshold on the base manifold.
    pub eta: f64,
    pub eps_grid: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
}

/// One row of a rare-event scan table.
#[derive(Debug, Clone, Serialize)]
pub struct ScanRow {
    pub eps: f64,
    pub replicas: usize,
    pub hits: usize,
    pub phat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `eps log phat`; minus infinity on zero hits (row is flagged).
    pub eps_log_phat: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<&'static str>,
}

/// Rare-event scan output, reproducible bitwise under its seed.
#[derive(Debug, Clone, Serialize)]
pub struct ScanTable {
    pub eta: f64,
    pub rows: Vec<ScanRow>,
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    let z = 1.959963984540054_f64;
    let n_f = n as f64;
    let p = hits as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Monte Carlo scan of the rare event "the rolled trace leaves the
/// eta-tube around the deterministic trace", over a grid of noise scales.
/// The limit trace is developed once from the unperturbed curve; each
/// replica rolls a perturbed curve (with optional twisting) and the
/// deviation is measured with the Riemannian distance at the shared grid
/// nodes. Replicas parallelize over independent seed streams, so thread
/// count never changes the table.
pub fn rare_event_scan(
    manifold: &Manifold,
    curve: &BaseCurve,
    u0: &OrthonormalFrame,
    cfg: &ScanConfig,
) -> Result<ScanTable> {
    if cfg.eta < 0.0 {
        return Err(RollError::Parameter("eta must be nonnegative".into()));
    }
    if cfg.replicas == 0 || cfg.eps_grid.is_empty() {
        return Err(RollError::Parameter("empty scan configuration".into()));
    }
    let grid = crate::paths::uniform_grid(cfg.t, cfg.h)?;
    let gamma = curve.sample(&grid)?;
    let limit = project(&develop(manifold, u0, &gamma)?);
    let basis = SkewBasis::new(manifold.dim())?;

    let mut rows = Vec::with_capacity(cfg.eps_grid.len());
    for (i, &eps) in cfg.eps_grid.iter().enumerate() {
        let hits: usize = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let hit = scan_replica(
                    manifold, curve, u0, cfg, &grid, &limit, &basis, eps, i, r,
                )?;
                Ok(hit as usize)
            })
            .collect::<Result<Vec<usize>>>()?
            .into_iter()
            .sum();
        let phat = hits as f64 / cfg.replicas as f64;
        let (ci_lo, ci_hi) = wilson_interval(hits, cfg.replicas);
        let flag = if hits == 0 {
            Some("no-hit")
        } else if hits == cfg.replicas {
            Some("all-hit")
        } else {
            None
        };
        rows.push(ScanRow {
            eps,
            replicas: cfg.replicas,
            hits,
            phat,
            ci_lo,
            ci_hi,
            eps_log_phat: eps * phat.ln(),
            flag,
        });
    }
    Ok(ScanTable { eta: cfg.eta, rows })
}

#[allow(clippy::too_many_arguments)]
fn scan_replica(
    manifold: &Manifold,
    curve: &BaseCurve,
    u0: &OrthonormalFrame,
    cfg: &ScanConfig,
    grid: &[f64],
    limit: &ManifoldPath,
    basis: &SkewBasis,
    eps: f64,
    eps_index: usize,
    replica: usize,
) -> Result<bool> {
    let cell = (eps_index * cfg.replicas + replica) as u64;
    let perturbed: SampledPath = match &cfg.mode {
        PerturbationMode::None => curve.sample(grid)?,
        PerturbationMode::Translational(spec) => {
            let s = sample_schedule_stream(spec, eps, cfg.t, cfg.seed, cell_stream(cell, 0))?;
            translational_slip(curve, &s, grid)?
        }
        PerturbationMode::InPlace(spec) => {
            let s = sample_schedule_stream(spec, eps, cfg.t, cfg.seed, cell_stream(cell, 0))?;
            inplace_slip(curve, &s, grid)?
        }
        PerturbationMode::PiecewiseLinear(spec) => {
            let s = sample_schedule_stream(spec, eps, cfg.t, cfg.seed, cell_stream(cell, 0))?;
            piecewise_linear_approx(curve, &s, grid)?
        }
        PerturbationMode::Brownian => {
            let b = DriftField::from_curve_velocity(curve);
            brownian_perturb_stream(
                &b,
                &curve.position(0.0),
                eps,
                grid,
                cfg.seed,
                cell_stream(cell, 1),
            )?
        }
    };
    // Slip modes refine the grid with their breakpoints; deviations are
    // measured at the shared base-grid nodes.
    let u = if cfg.twist {
        let w = sample_brownian_stream(
            basis.len(),
            &perturbed.grid,
            eps,
            cfg.seed,
            cell_stream(cell, 2),
        )?;
        stochastic_develop(manifold, u0, &strip_role(&perturbed)?, &w)?
    } else {
        develop(manifold, u0, &strip_role(&perturbed)?)?
    };
    let trace = project(&u);
    let mut sup = 0.0_f64;
    let mut j = 0usize;
    for (k, &t) in grid.iter().enumerate() {
        while j < trace.grid.len() && trace.grid[j] < t - 1e-12 {
            j += 1;
        }
        if j >= trace.grid.len() {
            break;
        }
        sup = sup.max(manifold.distance(&limit.points[k], &trace.points[j])?);
    }
    Ok(sup >= cfg.eta)
}

/// Development drivers must be finite-variation; Brownian-perturbed curves
/// are continuous semimartingales rolled the same way, so re-tag the path
/// for the integrator.
fn strip_role(p: &SampledPath) -> Result<SampledPath> {
    SampledPath::new(p.grid.clone(), p.values.clone(), PathRole::FiniteVariation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::development::develop_with_rotation;
    use crate::paths::uniform_grid;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn const_path(grid: &[f64], dim: usize) -> SampledPath {
        SampledPath::new(
            grid.to_vec(),
            vec![DVector::zeros(dim); grid.len()],
            PathRole::FiniteVariation,
        )
        .unwrap()
    }

    fn linear_path(grid: &[f64], v: &[f64]) -> SampledPath {
        let dir = DVector::from_row_slice(v);
        SampledPath::new(
            grid.to_vec(),
            grid.iter().map(|&t| &dir * t).collect(),
            PathRole::FiniteVariation,
        )
        .unwrap()
    }

    #[test]
    fn h1_action_examples() {
        let grid = uniform_grid(2.0, 0.01).unwrap();
        assert_eq!(h1_action(&const_path(&grid, 3)), 0.0);
        let f = linear_path(&grid, &[0.3, -0.4]);
        let expect = 0.5 * 0.25 * 2.0;
        assert!((h1_action(&f) - expect).abs() < 1e-12);
    }

    #[test]
    fn h1_action_refinement_second_order() {
        let f = |t: f64| DVector::from_row_slice(&[(2.0 * t).sin()]);
        let energy = |n: usize| {
            let grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
            let p = SampledPath::new(grid.clone(), grid.iter().map(|&t| f(t)).collect(), PathRole::FiniteVariation).unwrap();
            h1_action(&p)
        };
        let exact = 1.0 + (4.0f64).sin() / 4.0; // 1/2 int 4 cos^2(2t) dt on [0,1]
        let e1 = (energy(100) - exact).abs();
        let e2 = (energy(200) - exact).abs();
        assert!(e1 / e2 > 3.0, "refinement ratio {}", e1 / e2);
    }

    #[test]
    fn drift_action_examples() {
        let grid = uniform_grid(2.0, 1e-3).unwrap();
        // Pure kinetic: b = 0, y = v t.
        let y = linear_path(&grid, &[0.6, 0.8]);
        let b0 = DriftField::zero(2);
        assert!((drift_action(&y, &b0) - 0.5 * 1.0 * 2.0).abs() < 1e-12);

        // Zero on the flow of b.
        let curve = BaseCurve::circle(1.0);
        let b = DriftField::from_curve_velocity(&curve);
        let flow = curve.sample(&grid).unwrap();
        let a = drift_action(&flow, &b);
        assert!(a < 1e-4, "flow action {a}");
    }

    #[test]
    fn drift_action_quadratic_scaling() {
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let field = DriftField::new(
            Arc::new(|_t: f64, x: &DVector<f64>| {
                DVector::from_row_slice(&[0.5 * x[1].sin(), 0.5 * x[0].cos()])
            }),
            0.71,
            0.5,
        );
        // Reference flow by Euler on the same grid (the action's own rule).
        let mut flow = vec![DVector::from_row_slice(&[0.1, 0.2])];
        for k in 0..grid.len() - 1 {
            let dt = grid[k + 1] - grid[k];
            let prev = flow.last().unwrap().clone();
            let next = &prev + field.eval(grid[k], &prev) * dt;
            flow.push(next);
        }
        let ystar = SampledPath::new(grid.clone(), flow, PathRole::FiniteVariation).unwrap();
        assert!(drift_action(&ystar, &field) < 1e-10);
        let bump = |t: f64| DVector::from_row_slice(&[(3.0 * t).sin(), t * (1.0 - t)]);
        let action_at = |delta: f64| {
            let vals: Vec<DVector<f64>> = ystar
                .values
                .iter()
                .zip(&grid)
                .map(|(v, &t)| v + bump(t) * delta)
                .collect();
            let y = SampledPath::new(grid.clone(), vals, PathRole::FiniteVariation).unwrap();
            drift_action(&y, &field)
        };
        let deltas = [0.05_f64, 0.1, 0.2];
        let logs: Vec<(f64, f64)> = deltas.iter().map(|&d| (d.ln(), action_at(d).ln())).collect();
        // Least-squares slope of log action vs log delta.
        let n = logs.len() as f64;
        let sx: f64 = logs.iter().map(|p| p.0).sum();
        let sy: f64 = logs.iter().map(|p| p.1).sum();
        let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope - 2.0).abs() <= 0.05, "fitted exponent {slope}");
    }

    #[test]
    fn indicator_rate_band() {
        // Discrete derivatives of the sampled curve differ from the exact
        // velocity at O(h/2 |gamma''|); the tolerance absorbs that.
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let curve = BaseCurve::circle(1.0);
        let y = curve.sample(&grid).unwrap();
        let tol = 1e-2;
        assert_eq!(
            indicator_rate(&y, &curve, tol).unwrap(),
            RateValue::Finite(0.0)
        );
        // Derivative offset by (1, 0): positive L2 mass.
        let shifted = SampledPath::new(
            grid.clone(),
            y.values
                .iter()
                .zip(&grid)
                .map(|(v, &t)| v + DVector::from_row_slice(&[t, 0.0]))
                .collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        assert_eq!(indicator_rate(&shifted, &curve, 1e-3).unwrap(), RateValue::Infinite);
        // Noise inside the tolerance band stays feasible.
        let noisy = SampledPath::new(
            grid.clone(),
            y.values
                .iter()
                .zip(&grid)
                .map(|(v, &t)| v + DVector::from_row_slice(&[0.0, (40.0 * t).sin()]) * (tol / 2.0 / 40.0))
                .collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        assert_eq!(indicator_rate(&noisy, &curve, tol).unwrap(), RateValue::Finite(0.0));
        // Shift invariance: constant offsets of y and gamma cancel.
        let c = DVector::from_row_slice(&[5.0, -3.0]);
        let y_shift = SampledPath::new(
            grid.clone(),
            y.values.iter().map(|v| v + &c).collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        let curve_shift = {
            let base = curve.clone();
            let cc = c.clone();
            BaseCurve::new(
                2,
                Arc::new(move |t| base.position(t) + &cc),
                Arc::new({
                    let base = curve.clone();
                    move |t| base.velocity(t)
                }),
                curve.speed_bound,
                curve.vel_lipschitz,
            )
        };
        assert_eq!(
            indicator_rate(&y_shift, &curve_shift, tol).unwrap(),
            indicator_rate(&y, &curve, tol).unwrap()
        );
    }

    fn north_frame() -> (Manifold, OrthonormalFrame) {
        let m = Manifold::sphere(2);
        let u0 = m
            .canonical_frame(&crate::geometry::ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]))
            .unwrap();
        (m, u0)
    }

    #[test]
    fn rate_of_zero_cost_target() {
        let (m, u0) = north_frame();
        let curve = BaseCurve::circle(1.0);
        let b = DriftField::from_curve_velocity(&curve);
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let gamma = curve.sample(&grid).unwrap();
        let target = develop(&m, &u0, &gamma).unwrap();
        let report = rate_of_frame_path(&m, &target, &b, &OptimizerConfig::default()).unwrap();
        assert!(report.feasible);
        let total = report.total.finite().unwrap();
        assert!(total <= 1e-4, "zero-cost target reported {total}");
    }

    #[test]
    fn rate_feasible_start_never_worsens() {
        // Build a target from explicit controls and hand them to the
        // optimizer as its initial point.
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let y = linear_path(&grid, &[0.4, 0.2]);
        let f = linear_path(&grid, &[0.6]);
        let basis = SkewBasis::new(2).unwrap();
        let rot = integrate_rotation(&f, &basis).unwrap();
        let xtilde = develop_with_rotation(&m, &u0, &y, &rot).unwrap();
        let target = crate::development::FramePath {
            grid: xtilde.grid.clone(),
            frames: xtilde
                .frames
                .iter()
                .zip(&rot.values)
                .map(|(fr, g)| fr.rotated(g))
                .collect(),
            max_raw_defect: xtilde.max_raw_defect,
        };
        let b = DriftField::zero(2);
        let generating = drift_action(&y, &b) + h1_action(&f);
        let cfg = OptimizerConfig {
            initial_twist: Some(f.clone()),
            ..OptimizerConfig::default()
        };
        let report = rate_of_frame_path(&m, &target, &b, &cfg).unwrap();
        assert!(report.feasible, "residual {}", report.residual);
        let total = report.total.finite().unwrap();
        assert!(
            total <= generating + 1e-6,
            "total {total} vs generating {generating}"
        );
    }

    #[test]
    fn rate_on_flat_space_keeps_zero_twist() {
        // On flat space with b = 0 the twist cannot reduce the drift action.
        let m = Manifold::flat(2);
        let u0 = m
            .canonical_frame(&crate::geometry::ManifoldPoint::from_slice(&[0.0, 0.0]))
            .unwrap();
        let grid = uniform_grid(1.0, 1e-2).unwrap();
        let y0 = SampledPath::new(
            grid.clone(),
            grid.iter()
                .map(|&t| DVector::from_row_slice(&[t, (2.0 * t).sin() * 0.3]))
                .collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        let target = develop(&m, &u0, &y0).unwrap();
        let b = DriftField::zero(2);
        let report =
            rate_of_base_path(&m, &project(&target), &u0, &b, &OptimizerConfig::default()).unwrap();
        let expect = drift_action(&y0, &b);
        let total = report.total.finite().unwrap();
        assert!(
            (total - expect).abs() <= 1e-3 + 1e-6 * expect,
            "total {total} vs f = 0 candidate {expect}"
        );
        assert!(report.twist_part <= 1e-6, "twist part {}", report.twist_part);
    }

    #[test]
    fn rate_of_base_path_upper_bound() {
        let (m, u0) = north_frame();
        let grid = uniform_grid(1.0, 1e-3).unwrap();
        let y0 = linear_path(&grid, &[0.5, -0.3]);
        let target = develop(&m, &u0, &y0).unwrap();
        let b = DriftField::zero(2);
        let report =
            rate_of_base_path(&m, &project(&target), &u0, &b, &OptimizerConfig::default()).unwrap();
        assert!(report.feasible);
        let bound = drift_action(&y0, &b);
        let total = report.total.finite().unwrap();
        assert!(total <= bound + 1e-3, "total {total}, f = 0 bound {bound}");
    }

    #[test]
    fn rate_of_reversed_path_strictly_positive() {
        let m = Manifold::flat(2);
        let u0 = m
            .canonical_frame(&crate::geometry::ManifoldPoint::from_slice(&[0.0, 0.0]))
            .unwrap();
        let grid = uniform_grid(1.0, 1e-2).unwrap();
        let curve = BaseCurve::line(
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.0]),
        );
        let b = DriftField::from_curve_velocity(&curve);
        // Time-reversed trace: runs against the drift.
        let x = ManifoldPath {
            grid: grid.clone(),
            points: grid
                .iter()
                .map(|&t| crate::geometry::ManifoldPoint::from_slice(&[-t, 0.0]))
                .collect(),
        };
        let report = rate_of_base_path(&m, &x, &u0, &b, &OptimizerConfig::default()).unwrap();
        let total = report.total.finite().unwrap();
        // f = 0 anti-development gives the bracket 1/2 int |(-1) - 1|^2 = 2.
        assert!(total > 1.5, "reversed-path rate {total}");
    }

    #[test]
    fn tightness_censoring_and_verdicts() {
        let grid = uniform_grid(1.0, 0.05).unwrap();
        let make_ensemble = |eps: f64, n: usize, seed: u64| -> (f64, Vec<SampledPath>) {
            (
                eps,
                (0..n)
                    .map(|k| sample_brownian_stream(1, &grid, eps, seed, k as u64).unwrap())
                    .collect(),
            )
        };
        // Scaled family: censored floor reported where no hits occur.
        let ensembles = vec![make_ensemble(0.05, 1000, 1)];
        let table = tightness_diagnostic(&ensembles, 1.0, &[2.0], &[4.0], 0.1).unwrap();
        let cell = &table.sup_norm[0];
        assert!(cell.censored);
        assert!((cell.value - 0.05 * (1.0f64 / 1000.0).ln()).abs() < 1e-12);
        assert!((cell.value - (-0.3454)).abs() < 1e-3);

        // Epsilon-independent family: values shrink toward zero as eps
        // decreases, so the verdict must be negative.
        let fixed: Vec<(f64, Vec<SampledPath>)> = [0.4, 0.1]
            .iter()
            .map(|&eps| {
                let (_, paths) = make_ensemble(1.0, 1000, 7);
                (eps, paths)
            })
            .collect();
        let table = tightness_diagnostic(&fixed, 1.0, &[0.5], &[0.3], 0.1).unwrap();
        assert!(!table.verdict);
    }

    #[test]
    fn tightness_bounded_family_fully_censored() {
        // A deterministic bounded family never crosses thresholds above its
        // bound; every cell reports the Monte Carlo floor.
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let constant: Vec<SampledPath> = (0..1000)
            .map(|_| {
                SampledPath::new(
                    grid.clone(),
                    grid.iter().map(|&t| DVector::from_element(1, (5.0 * t).sin() * 0.3)).collect(),
                    PathRole::Deterministic,
                )
                .unwrap()
            })
            .collect();
        let ensembles = vec![(0.2, constant)];
        let table = tightness_diagnostic(&ensembles, 1.0, &[0.5, 1.0], &[2.0], 0.2).unwrap();
        for cell in table.sup_norm.iter().chain(&table.modulus) {
            assert_eq!(cell.hits, 0);
            assert!(cell.censored);
            assert!((cell.value - 0.2 * (1.0f64 / 1000.0).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn scan_twisting_only_probability_decays() {
        // With the curve fixed, base deviations are driven purely by the
        // vertical noise through the frame coupling; the hit probability
        // fades with the noise scale.
        let (m, u0) = north_frame();
        let curve = BaseCurve::circle(1.0);
        let cfg = ScanConfig {
            mode: PerturbationMode::None,
            twist: true,
            t: 1.0,
            h: 0.02,
            eta: 0.25,
            eps_grid: vec![0.4, 0.02],
            replicas: 400,
            seed: 77,
        };
        let table = rare_event_scan(&m, &curve, &u0, &cfg).unwrap();
        assert!(
            table.rows[0].phat > table.rows[1].phat,
            "{:?}",
            table.rows
        );
        assert!(table.rows[1].phat <= 0.05, "residual hits {:?}", table.rows[1]);
    }

    #[test]
    fn tightness_requires_ensemble_size() {
        let grid = uniform_grid(1.0, 0.1).unwrap();
        let small = vec![(0.1, vec![sample_brownian(&grid); 10])];
        assert!(tightness_diagnostic(&small, 1.0, &[1.0], &[1.0], 0.1).is_err());
    }

    fn sample_brownian(grid: &[f64]) -> SampledPath {
        crate::paths::sample_brownian(1, grid, 1.0, 0).unwrap()
    }

    #[test]
    fn scan_eta_zero_is_certain() {
        let (m, u0) = north_frame();
        let curve = BaseCurve::circle(1.0);
        let cfg = ScanConfig {
            mode: PerturbationMode::Brownian,
            twist: false,
            t: 0.5,
            h: 0.05,
            eta: 0.0,
            eps_grid: vec![0.4, 0.1],
            replicas: 50,
            seed: 5,
        };
        let table = rare_event_scan(&m, &curve, &u0, &cfg).unwrap();
        for row in &table.rows {
            assert_eq!(row.hits, row.replicas);
            assert_eq!(row.phat, 1.0);
            assert_eq!(row.eps_log_phat, 0.0);
            assert_eq!(row.flag, Some("all-hit"));
        }
    }

    #[test]
    fn scan_deterministic_under_seed() {
        let (m, u0) = north_frame();
        let curve = BaseCurve::circle(1.0);
        let cfg = ScanConfig {
            mode: PerturbationMode::Brownian,
            twist: true,
            t: 0.5,
            h: 0.02,
            eta: 0.3,
            eps_grid: vec![0.4, 0.2],
            replicas: 100,
            seed: 42,
        };
        let a = rare_event_scan(&m, &curve, &u0, &cfg).unwrap();
        let b = rare_event_scan(&m, &curve, &u0, &cfg).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!(x.hits, y.hits);
            assert_eq!(x.phat.to_bits(), y.phat.to_bits());
            assert_eq!(x.eps_log_phat.to_bits(), y.eps_log_phat.to_bits());
        }
    }

    #[test]
    fn scan_estimator_consistent_across_replica_counts() {
        let (m, u0) = north_frame();
        let curve = BaseCurve::circle(1.0);
        let base = ScanConfig {
            mode: PerturbationMode::Brownian,
            twist: false,
            t: 0.5,
            h: 0.02,
            eta: 0.25,
            eps_grid: vec![0.3],
            replicas: 1000,
            seed: 9,
        };
        let small = rare_event_scan(&m, &curve, &u0, &base).unwrap();
        let big = rare_event_scan(
            &m,
            &curve,
            &u0,
            &ScanConfig {
                replicas: 10_000,
                ..base
            },
        )
        .unwrap();
        // Wilson intervals of the two runs overlap.
        let (a, b) = (&small.rows[0], &big.rows[0]);
        assert!(a.ci_lo <= b.ci_hi && b.ci_lo <= a.ci_hi, "{a:?} vs {b:?}");
    }

    #[test]
    fn control_bundle_validates() {
        let grid = uniform_grid(1.0, 0.25).unwrap();
        let y = linear_path(&grid, &[1.0, 0.0]);
        let f = linear_path(&grid, &[0.2]);
        assert!(ControlBundle::new(y.clone(), f, None).is_ok());
        // Twist controls must start at zero.
        let bad = SampledPath::new(
            grid.clone(),
            grid.iter().map(|_| DVector::from_element(1, 1.0)).collect(),
            PathRole::FiniteVariation,
        )
        .unwrap();
        assert!(ControlBundle::new(y, bad, None).is_err());
    }

    #[test]
    fn wilson_interval_sane() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!(hi - lo < 0.25);
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.05);
    }

    proptest! {
        #[test]
        fn actions_nonnegative_and_convex(seed in 0u64..40) {
            use rand::Rng;
            let grid = uniform_grid(1.0, 0.05).unwrap();
            let mut rng = crate::rng::stream_rng(seed, 3);
            let rand_path = |rng: &mut rand_chacha::ChaCha8Rng| {
                let mut vals = vec![DVector::zeros(2)];
                for _ in 0..grid.len() - 1 {
                    let prev = vals.last().unwrap().clone();
                    vals.push(prev + DVector::from_fn(2, |_, _| rng.random_range(-0.2..0.2)));
                }
                SampledPath::new(grid.clone(), vals, PathRole::FiniteVariation).unwrap()
            };
            let c1 = rand_path(&mut rng);
            let c2 = rand_path(&mut rng);
            // Affine drift keeps the action convex in the control.
            let b = DriftField::new(
                Arc::new(|_t, x: &DVector<f64>| DVector::from_row_slice(&[0.3 * x[1] + 0.1, -0.2 * x[0]])),
                10.0,
                0.36,
            );
            let mid = SampledPath::new(
                grid.clone(),
                c1.values.iter().zip(&c2.values).map(|(a, b)| (a + b) * 0.5).collect(),
                PathRole::FiniteVariation,
            ).unwrap();
            let (a1, a2, am) = (drift_action(&c1, &b), drift_action(&c2, &b), drift_action(&mid, &b));
            prop_assert!(a1 >= 0.0 && a2 >= 0.0);
            prop_assert!(am <= 0.5 * (a1 + a2) + 1e-12);
            let (h1, h2, hm) = (h1_action(&c1), h1_action(&c2), h1_action(&mid));
            prop_assert!(hm <= 0.5 * (h1 + h2) + 1e-12);
        }
    }
}
