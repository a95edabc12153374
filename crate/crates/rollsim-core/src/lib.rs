//! Rolling Riemannian manifolds along random Euclidean curves.
//!
//! The crate simulates Cartan development on the orthonormal frame bundle,
//! with random slipping (compound-Poisson perturbations of the driving
//! curve) and random twisting (Brownian fiber noise), and probes the
//! exponential stability of the rolled traces: action-functional evaluation
//! over candidate controls, exponential-tightness diagnostics, and seeded
//! rare-event Monte Carlo scans.
//!
//! Modules:
//! - [`geometry`]: manifold backends (flat, sphere, half-plane, torus,
//!   user charts), geodesics, distances, orthonormal frames.
//! - [`paths`]: sampled paths, Brownian sampling, variation, quadratic
//!   covariation, Riemann-Stieltjes and Stratonovich integrals.
//! - [`rotation`]: the skew basis of so(d) and an exactly
//!   structure-preserving integrator on SO(d).
//! - [`development`]: development, stochastic development, the twisted
//!   decomposition, horizontal lift and anti-development.
//! - [`slipping`]: slipping schedules and the perturbed-curve generators.
//! - [`ldp`]: action functionals, rate evaluation, tightness diagnostics,
//!   rare-event scans.
//! - [`io`]: CSV/JSON emission with exact float round trips.

pub mod development;
pub mod error;
pub mod geometry;
pub mod io;
pub mod ldp;
pub mod paths;
pub mod rng;
pub mod rotation;
pub mod slipping;

pub use development::{
    antidevelop, antidevelop_twisted, develop, develop_decomposed, develop_with_rotation,
    horizontal_lift, horizontal_step, project, stochastic_develop, trace_length, FramePath,
    ManifoldPath,
};
pub use error::{Result, RollError};
pub use geometry::{ChartSpec, Manifold, ManifoldPoint, OrthonormalFrame};
pub use ldp::{
    drift_action, h1_action, indicator_rate, rare_event_scan, rate_of_base_path,
    rate_of_frame_path, tightness_diagnostic, ActionReport, ControlBundle, OptimizerConfig,
    PerturbationMode, RateValue, ScanConfig, ScanTable,
};
pub use paths::{
    covariation_independence_check, g_process, modulus_of_continuity, quadratic_variation,
    sample_brownian, stieltjes_integral, stratonovich_integral, sup_norm, total_variation,
    uniform_grid, MatrixPath, PathRole, SampledPath,
};
pub use rotation::{integrate_rotation, skew_expm, RotationPath, SkewBasis};
pub use slipping::{
    brownian_perturb, check_mean_jump_condition, check_rate_divergence, inplace_slip,
    piecewise_linear_approx, sample_schedule, translational_slip, BaseCurve, DriftField,
    JumpMeasureSpec, SlippingSchedule,
};
