//! Randomly perturbed Euclidean curves: compound-Poisson slipping schedules,
//! the translational / in-place / piecewise-linear slip constructions, the
//! Brownian perturbation of a drift flow, and the jump-measure condition
//! checkers.
//!
//! Slip windows are placed on the time axis cumulatively: window `k` opens at
//! `c_k = tau_1 + ... + tau_k + e_1 + ... + e_{k-1}` and lasts `e_k`, where
//! the `tau_k` are the jump times of the subordinator and `e_k` the jump
//! sizes. Windows therefore never overlap. Every generated sample is checked
//! against its pathwise deviation and variation bounds before being returned.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Result, RollError};
use crate::paths::{Decomposition, PathRole, SampledPath};
use crate::rng::stream_rng;

/// A differentiable base curve with a bounded speed.
#[derive(Clone)]
pub struct BaseCurve {
    pub dim: usize,
    pos: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    vel: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    /// Bound on `|velocity|`.
    pub speed_bound: f64,
    /// Lipschitz constant of the velocity, when known (required by the
    /// piecewise-linear construction).
    pub vel_lipschitz: Option<f64>,
}

impl std::fmt::Debug for BaseCurve {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BaseCurve(dim={}, speed<={}, lip={:?})",
            self.dim, self.speed_bound, self.vel_lipschitz
        )
    }
}

impl BaseCurve {
    pub fn new(
        dim: usize,
        pos: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
        vel: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
        speed_bound: f64,
        vel_lipschitz: Option<f64>,
    ) -> Self {
        Self {
            dim,
            pos,
            vel,
            speed_bound,
            vel_lipschitz,
        }
    }

    pub fn position(&self, t: f64) -> DVector<f64> {
        (self.pos)(t)
    }

    pub fn velocity(&self, t: f64) -> DVector<f64> {
        (self.vel)(t)
    }

    /// Straight line `x0 + t * dir`, speed `|dir|`.
    pub fn line(x0: DVector<f64>, dir: DVector<f64>) -> Self {
        let dim = x0.len();
        let speed = dir.norm();
        let p0 = x0.clone();
        let d = dir.clone();
        let d2 = dir;
        Self::new(
            dim,
            Arc::new(move |t| &p0 + &d * t),
            Arc::new(move |_| d2.clone()),
            speed,
            Some(0.0),
        )
    }

    /// Unit-speed circle of the given radius through the origin's right.
    pub fn circle(radius: f64) -> Self {
        let r = radius;
        Self::new(
            2,
            Arc::new(move |t| DVector::from_row_slice(&[r * (t / r).cos(), r * (t / r).sin()])),
            Arc::new(move |t| DVector::from_row_slice(&[-(t / r).sin(), (t / r).cos()])),
            1.0,
            Some(1.0 / r),
        )
    }

    /// Planar Lissajous figure `(a sin t, b sin(2t))`.
    pub fn lissajous(a: f64, b: f64) -> Self {
        let speed = (a * a + 4.0 * b * b).sqrt();
        let lip = (a * a + 16.0 * b * b).sqrt();
        Self::new(
            2,
            Arc::new(move |t| DVector::from_row_slice(&[a * t.sin(), b * (2.0 * t).sin()])),
            Arc::new(move |t| DVector::from_row_slice(&[a * t.cos(), 2.0 * b * (2.0 * t).cos()])),
            speed,
            Some(lip),
        )
    }

    /// Piecewise-linear curve through sampled nodes; the velocity is the
    /// cell slope (no Lipschitz constant available).
    pub fn from_samples(path: &SampledPath) -> Result<Self> {
        if path.len() < 2 {
            return Err(RollError::Parameter("need at least two nodes".into()));
        }
        let grid = path.grid.clone();
        let values = path.values.clone();
        let mut speed: f64 = 0.0;
        for k in 0..grid.len() - 1 {
            speed = speed.max((&values[k + 1] - &values[k]).norm() / (grid[k + 1] - grid[k]));
        }
        let dim = path.value_dim();
        let g1 = grid.clone();
        let v1 = values.clone();
        let pos = move |t: f64| -> DVector<f64> {
            let t = t.clamp(g1[0], *g1.last().unwrap());
            let k = match g1.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                Ok(k) => return v1[k].clone(),
                Err(k) => (k - 1).min(g1.len() - 2),
            };
            let w = (t - g1[k]) / (g1[k + 1] - g1[k]);
            &v1[k] * (1.0 - w) + &v1[k + 1] * w
        };
        let vel = move |t: f64| -> DVector<f64> {
            let t = t.clamp(grid[0], *grid.last().unwrap());
            let k = match grid.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
                Ok(k) => k.min(grid.len() - 2),
                Err(k) => (k - 1).min(grid.len() - 2),
            };
            (&values[k + 1] - &values[k]) / (grid[k + 1] - grid[k])
        };
        Ok(Self::new(dim, Arc::new(pos), Arc::new(vel), speed, None))
    }

    /// Samples the curve on a grid as a finite-variation path.
    pub fn sample(&self, grid: &[f64]) -> Result<SampledPath> {
        SampledPath::new(
            grid.to_vec(),
            grid.iter().map(|&t| self.position(t)).collect(),
            PathRole::FiniteVariation,
        )
    }

    /// Samples `|velocity|` over the grid and checks it against the stated
    /// bound; returns the largest observed speed.
    pub fn audit_speed(&self, grid: &[f64]) -> f64 {
        grid.iter().map(|&t| self.velocity(t).norm()).fold(0.0, f64::max)
    }
}

/// Jump measure family `nu^eps` of a compound-Poisson subordinator: total
/// rate, inverse-CDF jump sampler, and the mean-jump integral
/// `int x nu^eps(dx)`.
#[derive(Clone)]
pub struct JumpMeasureSpec {
    pub name: String,
    rate: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    inv_cdf: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    mean_jump: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Smallest epsilon before the rate overflows (0 when it never does).
    pub eps_floor: f64,
}

impl std::fmt::Debug for JumpMeasureSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "JumpMeasureSpec({})", self.name)
    }
}

/// Rates above this are refused outright.
const RATE_OVERFLOW: f64 = 1.0142320547350045e304; // exp(700)
/// Cap on the expected jump count of one schedule.
const MAX_EXPECTED_JUMPS: f64 = 2e7;

impl JumpMeasureSpec {
    pub fn new(
        name: impl Into<String>,
        rate: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        inv_cdf: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        mean_jump: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        eps_floor: f64,
    ) -> Self {
        Self {
            name: name.into(),
            rate,
            inv_cdf,
            mean_jump,
            eps_floor,
        }
    }

    pub fn rate(&self, eps: f64) -> f64 {
        (self.rate)(eps)
    }

    pub fn sample_jump(&self, eps: f64, u: f64) -> f64 {
        (self.inv_cdf)(eps, u)
    }

    pub fn mean_jump(&self, eps: f64) -> f64 {
        (self.mean_jump)(eps)
    }

    /// Exponential density with rapidly growing decay:
    /// `nu^eps(dx) = exp(-x exp(eps^-1.1)) dx`. The mean jump collapses
    /// super-exponentially, so slipping vanishes in the small-noise limit.
    pub fn vanishing_exponential() -> Self {
        Self::new(
            "vanishing-exponential",
            Arc::new(|eps: f64| (-eps.powf(-1.1)).exp()),
            Arc::new(|eps: f64, u: f64| -(1.0 - u).ln() * (-eps.powf(-1.1)).exp()),
            Arc::new(|eps: f64| (-2.0 * eps.powf(-1.1)).exp()),
            0.0,
        )
    }

    /// Exponential density with exploding rate:
    /// `nu^eps(dx) = exp(-x exp(-eps^-1.1)) dx`, so `eps * rate -> infinity`
    /// and the jump times become dense (the piecewise-linear refinement
    /// regime). The rate overflows below `eps ~ 0.0026`.
    pub fn exploding_exponential() -> Self {
        // rate = exp(eps^-1.1) <= exp(700) forces eps >= 700^(-1/1.1).
        let floor = 700f64.powf(-1.0 / 1.1);
        Self::new(
            "exploding-exponential",
            Arc::new(|eps: f64| eps.powf(-1.1).exp()),
            Arc::new(|eps: f64, u: f64| -(1.0 - u).ln() / (-eps.powf(-1.1)).exp()),
            Arc::new(|eps: f64| (2.0 * eps.powf(-1.1)).exp()),
            floor,
        )
    }

    /// Epsilon-independent exponential measure with the given total rate and
    /// mean jump size: `nu(dx) = (lambda/theta) exp(-x/theta) dx`.
    pub fn fixed_exponential(lambda: f64, mean_jump_size: f64) -> Self {
        let theta = mean_jump_size;
        Self::new(
            format!("fixed-exponential(lambda={lambda},mean={theta})"),
            Arc::new(move |_| lambda),
            Arc::new(move |_, u: f64| -(1.0 - u).ln() * theta),
            Arc::new(move |_| lambda * theta),
            0.0,
        )
    }

    /// Looks a built-in family up by name.
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "vanishing-exponential" => Some(Self::vanishing_exponential()),
            "exploding-exponential" => Some(Self::exploding_exponential()),
            _ => None,
        }
    }
}

/// Jump times and slip durations of one sampled subordinator path.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SlippingSchedule {
    /// Jump times, strictly increasing, all within the horizon.
    pub jump_times: Vec<f64>,
    /// Positive slip durations, one per jump.
    pub durations: Vec<f64>,
    pub horizon: f64,
}

impl SlippingSchedule {
    pub fn empty(horizon: f64) -> Self {
        Self {
            jump_times: Vec::new(),
            durations: Vec::new(),
            horizon,
        }
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }

    /// Total slipping time `S_T = sum e_k` accumulated by the horizon.
    pub fn total_slip(&self) -> f64 {
        self.durations.iter().sum()
    }

    /// Cumulative window placement: window `k` = `[c_k, c_k + e_k)` with
    /// `c_k = sum_{j<=k} tau_j + sum_{j<k} e_j`.
    pub fn slip_windows(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        let mut clock = 0.0;
        for (tau, e) in self.jump_times.iter().zip(&self.durations) {
            clock += tau;
            out.push((clock, *e));
            clock += e;
        }
        out
    }
}

/// Samples the jump times and durations of the subordinator over `[0, t]`:
/// inter-arrivals are Exponential(rate), durations are drawn from the jump
/// size distribution by inverse CDF. Deterministic under the seed.
pub fn sample_schedule(
    spec: &JumpMeasureSpec,
    eps: f64,
    t: f64,
    seed: u64,
) -> Result<SlippingSchedule> {
    sample_schedule_stream(spec, eps, t, seed, 0)
}

/// Stream-indexed variant for ensembles.
pub fn sample_schedule_stream(
    spec: &JumpMeasureSpec,
    eps: f64,
    t: f64,
    seed: u64,
    stream: u64,
) -> Result<SlippingSchedule> {
    let lambda = spec.rate(eps);
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(RollError::Parameter(format!(
            "jump rate must be positive, got {lambda} at eps = {eps}"
        )));
    }
    if !lambda.is_finite() || lambda >= RATE_OVERFLOW || lambda * t > MAX_EXPECTED_JUMPS {
        return Err(RollError::Saturation {
            eps,
            eps_floor: spec.eps_floor,
        });
    }
    let mut rng = stream_rng(seed, stream);
    let mut schedule = SlippingSchedule::empty(t);
    let mut clock = 0.0;
    loop {
        let u: f64 = rng.random();
        clock += -(1.0 - u).ln() / lambda;
        if clock > t {
            break;
        }
        let v: f64 = rng.random();
        let dur = spec.sample_jump(eps, v);
        if dur.is_nan() || dur <= 0.0 {
            return Err(RollError::Parameter(format!(
                "jump sampler produced a non-positive duration {dur}"
            )));
        }
        schedule.jump_times.push(clock);
        schedule.durations.push(dur);
    }
    Ok(schedule)
}

/// Merges schedule breakpoints into the base grid so the piecewise formulas
/// are exact, independent of the base step.
fn grid_with_breakpoints(grid: &[f64], breakpoints: &[f64]) -> Vec<f64> {
    let end = *grid.last().unwrap();
    let mut out: Vec<f64> = grid.to_vec();
    out.extend(breakpoints.iter().copied().filter(|&b| b > 0.0 && b < end));
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    out
}

/// Pathwise deviation / variation report of a slip construction, checked
/// sample-by-sample against the construction's bounds.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SlipBounds {
    pub deviation_sup: f64,
    pub deviation_bound: f64,
    pub variation: f64,
    pub variation_bound: f64,
}

impl SlipBounds {
    pub fn satisfied(&self) -> bool {
        let slack = 1e-9;
        self.deviation_sup <= self.deviation_bound * (1.0 + 1e-12) + slack
            && self.variation <= self.variation_bound * (1.0 + 1e-12) + slack
    }
}

fn check_bounds(kind: &str, bounds: &SlipBounds) -> Result<()> {
    if bounds.satisfied() {
        Ok(())
    } else {
        Err(RollError::Parameter(format!(
            "{kind} slip violated its pathwise bounds: {bounds:?}"
        )))
    }
}

/// Translational slipping: during each window the curve freezes, afterwards
/// it resumes at the current clock shifted so the windowed arc is excised.
/// Deviation is bounded by `C S_T` and the variation never exceeds the base
/// curve's.
pub fn translational_slip(
    curve: &BaseCurve,
    schedule: &SlippingSchedule,
    grid: &[f64],
) -> Result<SampledPath> {
    let (path, bounds) = translational_slip_with_bounds(curve, schedule, grid)?;
    check_bounds("translational", &bounds)?;
    Ok(path)
}

/// [`translational_slip`] together with its bound report.
pub fn translational_slip_with_bounds(
    curve: &BaseCurve,
    schedule: &SlippingSchedule,
    grid: &[f64],
) -> Result<(SampledPath, SlipBounds)> {
    let windows = schedule.slip_windows();
    let breakpoints: Vec<f64> = windows.iter().flat_map(|&(c, e)| [c, c + e]).collect();
    let grid = grid_with_breakpoints(grid, &breakpoints);
    let mut values = Vec::with_capacity(grid.len());
    let mut cut = DVector::zeros(curve.dim);
    let mut win = 0usize;
    for &t in &grid {
        // Advance past completed windows, accumulating their excised arcs.
        while win < windows.len() && windows[win].0 + windows[win].1 <= t + 1e-12 {
            let (c, e) = windows[win];
            cut += curve.position(c + e) - curve.position(c);
            win += 1;
        }
        let inside = win < windows.len() && windows[win].0 <= t + 1e-12;
        if inside {
            values.push(curve.position(windows[win].0) - &cut);
        } else {
            values.push(curve.position(t) - &cut);
        }
    }
    let path = SampledPath::new(grid, values, PathRole::FiniteVariation)?;
    let base = curve.sample(&path.grid)?;
    let bounds = SlipBounds {
        deviation_sup: sup_gap(&path, &base),
        deviation_bound: curve.speed_bound * schedule.total_slip(),
        variation: crate::paths::total_variation(&path, path.end_time())?,
        variation_bound: crate::paths::total_variation(&base, base.end_time())?,
    };
    Ok((path, bounds))
}

/// In-place slipping: during each window the curve extends along the tangent
/// at the slip point; afterwards the original curve resumes, time-shifted by
/// the accumulated slip and displaced by the tangent extensions. Deviation
/// is bounded by `2 C S_T`, variation by `C (t + S_t)`.
pub fn inplace_slip(
    curve: &BaseCurve,
    schedule: &SlippingSchedule,
    grid: &[f64],
) -> Result<SampledPath> {
    let (path, bounds) = inplace_slip_with_bounds(curve, schedule, grid)?;
    check_bounds("in-place", &bounds)?;
    Ok(path)
}

/// [`inplace_slip`] together with its bound report.
pub fn inplace_slip_with_bounds(
    curve: &BaseCurve,
    schedule: &SlippingSchedule,
    grid: &[f64],
) -> Result<(SampledPath, SlipBounds)> {
    let windows = schedule.slip_windows();
    let breakpoints: Vec<f64> = windows.iter().flat_map(|&(c, e)| [c, c + e]).collect();
    let grid = grid_with_breakpoints(grid, &breakpoints);
    let mut values = Vec::with_capacity(grid.len());
    let mut shift = 0.0; // accumulated slip duration of completed windows
    let mut offset = DVector::zeros(curve.dim); // sum e_j vel(a_j)
    let mut win = 0usize;
    for &t in &grid {
        while win < windows.len() && windows[win].0 + windows[win].1 <= t + 1e-12 {
            let (c, e) = windows[win];
            let arg = c - shift;
            offset += curve.velocity(arg) * e;
            shift += e;
            win += 1;
        }
        let inside = win < windows.len() && windows[win].0 <= t + 1e-12;
        if inside {
            let (c, _) = windows[win];
            let arg = c - shift;
            values.push(curve.position(arg) + &offset + curve.velocity(arg) * (t - c));
        } else {
            values.push(curve.position(t - shift) + &offset);
        }
    }
    let path = SampledPath::new(grid, values, PathRole::FiniteVariation)?;
    let base = curve.sample(&path.grid)?;
    let s_t = schedule.total_slip();
    let bounds = SlipBounds {
        deviation_sup: sup_gap(&path, &base),
        deviation_bound: 2.0 * curve.speed_bound * s_t,
        variation: crate::paths::total_variation(&path, path.end_time())?,
        variation_bound: curve.speed_bound * (path.end_time() + s_t),
    };
    Ok((path, bounds))
}

/// Rolling along the piecewise-linear approximation: the velocity is frozen
/// at each jump time until the next one. Variation is bounded by `C t`, and
/// the deviation by the largest inter-jump gap (times the velocity's
/// Lipschitz constant and the horizon).
pub fn piecewise_linear_approx(
    curve: &BaseCurve,
    schedule: &SlippingSchedule,
    grid: &[f64],
) -> Result<SampledPath> {
    let (path, bounds) = piecewise_linear_approx_with_bounds(curve, schedule, grid)?;
    check_bounds("piecewise-linear", &bounds)?;
    Ok(path)
}

/// [`piecewise_linear_approx`] together with its bound report.
pub fn piecewise_linear_approx_with_bounds(
    curve: &BaseCurve,
    schedule: &SlippingSchedule,
    grid: &[f64],
) -> Result<(SampledPath, SlipBounds)> {
    let lip = curve.vel_lipschitz.ok_or_else(|| {
        RollError::Parameter(
            "piecewise-linear approximation needs the velocity's Lipschitz constant".into(),
        )
    })?;
    let grid = grid_with_breakpoints(grid, &schedule.jump_times);
    let end = *grid.last().unwrap();
    let mut values = Vec::with_capacity(grid.len());
    values.push(curve.position(0.0));
    let mut jump = 0usize; // index of the next jump time
    let mut speed = curve.velocity(0.0);
    for w in grid.windows(2) {
        while jump < schedule.jump_times.len() && schedule.jump_times[jump] <= w[0] + 1e-12 {
            speed = curve.velocity(schedule.jump_times[jump]);
            jump += 1;
        }
        let prev = values.last().unwrap().clone();
        values.push(prev + &speed * (w[1] - w[0]));
    }
    let path = SampledPath::new(grid, values, PathRole::FiniteVariation)?;
    let base = curve.sample(&path.grid)?;
    // est-style gap bound: C T^2 before the first jump, otherwise
    // C T max(gaps up to the last jump, tail).
    let c = curve.speed_bound.max(lip);
    let taus: Vec<f64> = schedule
        .jump_times
        .iter()
        .copied()
        .filter(|&tau| tau <= end)
        .collect();
    let deviation_bound = if taus.is_empty() {
        c * end * end
    } else {
        let mut max_gap: f64 = 0.0;
        let mut prev = 0.0;
        for &tau in &taus {
            max_gap = max_gap.max(tau - prev);
            prev = tau;
        }
        c * end * max_gap.max(end - prev)
    };
    let bounds = SlipBounds {
        deviation_sup: sup_gap(&path, &base),
        deviation_bound,
        variation: crate::paths::total_variation(&path, end)?,
        variation_bound: curve.speed_bound * end,
    };
    Ok((path, bounds))
}

fn sup_gap(a: &SampledPath, b: &SampledPath) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Drift field callable `(t, x) -> b(t, x)`.
pub type DriftFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// A bounded, Lipschitz drift field `b(t, x)`.
#[derive(Clone)]
pub struct DriftField {
    field: DriftFn,
    pub bound: f64,
    pub lipschitz: f64,
}

impl std::fmt::Debug for DriftField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "DriftField(|b| <= {}, lip {})", self.bound, self.lipschitz)
    }
}

impl DriftField {
    pub fn new(field: DriftFn, bound: f64, lipschitz: f64) -> Self {
        Self {
            field,
            bound,
            lipschitz,
        }
    }

    pub fn eval(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        (self.field)(t, x)
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(Arc::new(move |_, _| DVector::zeros(dim)), 0.0, 0.0)
    }

    /// Time-dependent field `b(t, .) = curve_velocity(t)`, so the
    /// deterministic flow retraces the curve.
    pub fn from_curve_velocity(curve: &BaseCurve) -> Self {
        let c = curve.clone();
        Self::new(
            Arc::new(move |t, _| c.velocity(t)),
            curve.speed_bound,
            0.0,
        )
    }

    /// Samples `|b|` over a time grid at the given states and returns the
    /// largest value observed (should not exceed the stated bound).
    pub fn audit_bound(&self, grid: &[f64], states: &[DVector<f64>]) -> f64 {
        grid.iter()
            .zip(states)
            .map(|(&t, x)| self.eval(t, x).norm())
            .fold(0.0, f64::max)
    }
}

/// Euler-Maruyama solution of `dx = b(t, x) dt + sqrt(eps) dB`, returned as
/// a decomposed semimartingale (drift part and martingale part stored
/// separately so the scaled variation process can be formed).
pub fn brownian_perturb(
    b: &DriftField,
    gamma0: &DVector<f64>,
    eps: f64,
    grid: &[f64],
    seed: u64,
) -> Result<SampledPath> {
    brownian_perturb_stream(b, gamma0, eps, grid, seed, 0)
}

/// Stream-indexed variant for ensembles.
pub fn brownian_perturb_stream(
    b: &DriftField,
    gamma0: &DVector<f64>,
    eps: f64,
    grid: &[f64],
    seed: u64,
    stream: u64,
) -> Result<SampledPath> {
    if eps < 0.0 {
        return Err(RollError::Parameter(format!("eps must be >= 0, got {eps}")));
    }
    let m = crate::paths::sample_brownian_stream(gamma0.len(), grid, eps, seed, stream)?;
    let mut a_values = Vec::with_capacity(grid.len());
    let mut values = Vec::with_capacity(grid.len());
    a_values.push(gamma0.clone());
    values.push(gamma0.clone());
    for k in 0..grid.len() - 1 {
        let dt = grid[k + 1] - grid[k];
        let drift = b.eval(grid[k], &values[k]) * dt;
        let a_next = &a_values[k] + drift;
        let x_next = &a_next + &m.values[k + 1];
        a_values.push(a_next);
        values.push(x_next);
    }
    SampledPath::new_semimartingale(
        grid.to_vec(),
        values,
        Decomposition {
            a_values,
            m_values: m.values,
        },
    )
}

/// One row of a jump-measure condition table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionRow {
    pub eps: f64,
    pub value: f64,
}

/// Condition table over an epsilon grid with a monotonicity verdict. Rows
/// are ordered by decreasing epsilon.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionTable {
    pub kind: String,
    pub rows: Vec<ConditionRow>,
    pub verdict: bool,
}

fn sorted_desc(eps_grid: &[f64]) -> Result<Vec<f64>> {
    if eps_grid.is_empty() {
        return Err(RollError::Parameter("empty epsilon grid".into()));
    }
    if eps_grid.iter().any(|&e| e <= 0.0) {
        return Err(RollError::Parameter("epsilon grid must be positive".into()));
    }
    let mut eps = eps_grid.to_vec();
    eps.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(eps)
}

/// Tabulates `eps * log int x nu^eps(dx)` over the grid. The slipping
/// vanishes in the limit when the column diverges to minus infinity, so the
/// verdict requires the values to decrease strictly as epsilon shrinks and
/// to end negative.
pub fn check_mean_jump_condition(
    spec: &JumpMeasureSpec,
    eps_grid: &[f64],
) -> Result<ConditionTable> {
    let eps = sorted_desc(eps_grid)?;
    let mut rows = Vec::with_capacity(eps.len());
    for &e in &eps {
        let mean = spec.mean_jump(e);
        if !mean.is_finite() || mean <= 0.0 {
            return Err(RollError::NonIntegrable(format!(
                "mean jump integral = {mean} at eps = {e}"
            )));
        }
        rows.push(ConditionRow {
            eps: e,
            value: e * mean.ln(),
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].value < w[0].value);
    let verdict = decreasing && rows.last().unwrap().value < 0.0;
    Ok(ConditionTable {
        kind: "mean-jump".into(),
        rows,
        verdict,
    })
}

/// Tabulates `eps * rate(eps)` over the grid; the jump times densify when
/// the column diverges, so the verdict requires strict increase as epsilon
/// shrinks.
pub fn check_rate_divergence(spec: &JumpMeasureSpec, eps_grid: &[f64]) -> Result<ConditionTable> {
    let eps = sorted_desc(eps_grid)?;
    let rows: Vec<ConditionRow> = eps
        .iter()
        .map(|&e| ConditionRow {
            eps: e,
            value: e * spec.rate(e),
        })
        .collect();
    let verdict = rows.windows(2).all(|w| w[1].value > w[0].value);
    Ok(ConditionTable {
        kind: "rate-divergence".into(),
        rows,
        verdict,
    })
}
