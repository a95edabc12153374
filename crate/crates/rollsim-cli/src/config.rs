//! Run configuration: a single JSON document, with CLI flags taking
//! precedence over file values.

use std::path::PathBuf;

use anyhow::{bail, Context};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use rollsim_core::geometry::Manifold;
use rollsim_core::io::{manifold_from_spec, ManifoldSpecJson};
use rollsim_core::slipping::{BaseCurve, JumpMeasureSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_manifold")]
    pub manifold: ManifoldSpecJson,
    #[serde(default)]
    pub curve: CurveConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub roll: RollConfig,
    #[serde(default)]
    pub rate: RateConfig,
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub check: CheckConfig,
}

fn default_manifold() -> ManifoldSpecJson {
    ManifoldSpecJson {
        kind: "sphere".into(),
        dim: 2,
        period: None,
    }
}

fn default_seed() -> u64 {
    0
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("default config")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveConfig {
    /// Built-in curve name: "line", "circle" or "lissajous"; ignored when
    /// `csv` is set.
    #[serde(default = "default_curve_name")]
    pub name: String,
    /// Direction of the line (its norm is the speed).
    #[serde(default)]
    pub direction: Option<Vec<f64>>,
    /// Start point of the line.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    /// Circle radius (unit speed).
    #[serde(default)]
    pub radius: Option<f64>,
    /// Lissajous amplitudes.
    #[serde(default)]
    pub amplitude: Option<[f64; 2]>,
    /// CSV file with a sampled curve (columns t,v_1..v_m).
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

fn default_curve_name() -> String {
    "circle".into()
}

impl Default for CurveConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("default curve")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_t() -> f64 {
    std::f64::consts::TAU
}

fn default_h() -> f64 {
    1e-3
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            t: default_t(),
            h: default_h(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollConfig {
    /// Slipping mode: "none", "translational", "in-place",
    /// "piecewise-linear" or "brownian".
    #[serde(default = "default_slip_mode")]
    pub mode: String,
    /// Jump measure family name (built-ins: "vanishing-exponential",
    /// "exploding-exponential") or "fixed" with rate/mean below.
    #[serde(default = "default_measure")]
    pub measure: String,
    #[serde(default)]
    pub fixed_rate: Option<f64>,
    #[serde(default)]
    pub fixed_mean_jump: Option<f64>,
    /// One file set is emitted per slipping scale.
    #[serde(default = "default_roll_eps")]
    pub eps: Vec<f64>,
    /// Twisting noise scale; zero disables the fiber noise.
    #[serde(default)]
    pub twist_eps: f64,
}

fn default_slip_mode() -> String {
    "translational".into()
}

fn default_measure() -> String {
    "vanishing-exponential".into()
}

fn default_roll_eps() -> Vec<f64> {
    vec![0.3, 0.1, 0.03]
}

impl Default for RollConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("default roll")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    /// Drift field of the rate: "curve-velocity" or "zero".
    #[serde(default = "default_rate_field")]
    pub field: String,
    #[serde(default = "default_control_nodes")]
    pub control_nodes: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_feasibility_tol")]
    pub feasibility_tol: f64,
    /// Evaluate against the frame path ("frame") or the base trace ("base").
    #[serde(default = "default_rate_target")]
    pub target: String,
}

fn default_rate_field() -> String {
    "curve-velocity".into()
}

fn default_control_nodes() -> usize {
    16
}

fn default_budget() -> usize {
    500
}

fn default_feasibility_tol() -> f64 {
    1e-6
}

fn default_rate_target() -> String {
    "base".into()
}

impl Default for RateConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("default rate")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default = "default_scan_mode")]
    pub mode: String,
    #[serde(default = "default_measure")]
    pub measure: String,
    #[serde(default)]
    pub fixed_rate: Option<f64>,
    #[serde(default)]
    pub fixed_mean_jump: Option<f64>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_scan_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub twist: bool,
}

fn default_scan_mode() -> String {
    "brownian".into()
}

fn default_eta() -> f64 {
    0.5
}

fn default_scan_eps() -> Vec<f64> {
    vec![0.4, 0.2, 0.1]
}

fn default_replicas() -> usize {
    10_000
}

impl Default for ScanSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("default scan")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_check_eps")]
    pub eps: Vec<f64>,
    /// Families checked for the vanishing-mean-jump condition, with the
    /// expected verdict.
    #[serde(default = "default_mean_jump_checks")]
    pub mean_jump: Vec<FamilyCheck>,
    /// Families checked for rate divergence, with the expected verdict.
    #[serde(default = "default_rate_checks")]
    pub rate_divergence: Vec<FamilyCheck>,
    #[serde(default)]
    pub tightness: Option<TightnessConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyCheck {
    pub measure: String,
    pub expect: bool,
}

fn default_check_eps() -> Vec<f64> {
    vec![0.3, 0.2, 0.1]
}

fn default_mean_jump_checks() -> Vec<FamilyCheck> {
    vec![FamilyCheck {
        measure: "vanishing-exponential".into(),
        expect: true,
    }]
}

fn default_rate_checks() -> Vec<FamilyCheck> {
    vec![FamilyCheck {
        measure: "exploding-exponential".into(),
        expect: true,
    }]
}

impl Default for CheckConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("default check")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessConfig {
    pub eps: Vec<f64>,
    pub replicas: usize,
    pub a_grid: Vec<f64>,
    pub eta_grid: Vec<f64>,
    pub rho: f64,
}

impl RunConfig {
    pub fn load(path: Option<&PathBuf>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn manifold(&self) -> anyhow::Result<Manifold> {
        Ok(manifold_from_spec(&self.manifold)?)
    }

    pub fn curve(&self) -> anyhow::Result<BaseCurve> {
        if let Some(csv) = &self.curve.csv {
            let file = std::fs::File::open(csv)
                .with_context(|| format!("reading curve CSV {}", csv.display()))?;
            let path = rollsim_core::io::read_path_csv(
                std::io::BufReader::new(file),
                rollsim_core::paths::PathRole::FiniteVariation,
            )?;
            return Ok(BaseCurve::from_samples(&path)?);
        }
        let dim = self.manifold.dim;
        match self.curve.name.as_str() {
            "line" => {
                let dir = self
                    .curve
                    .direction
                    .clone()
                    .unwrap_or_else(|| unit_direction(dim));
                let start = self.curve.start.clone().unwrap_or_else(|| vec![0.0; dim]);
                if dir.len() != dim || start.len() != dim {
                    bail!("line direction/start must have {} components", dim);
                }
                Ok(BaseCurve::line(
                    DVector::from_row_slice(&start),
                    DVector::from_row_slice(&dir),
                ))
            }
            "circle" => {
                if dim != 2 {
                    bail!("the circle curve is planar; manifold dimension is {}", dim);
                }
                Ok(BaseCurve::circle(self.curve.radius.unwrap_or(1.0)))
            }
            "lissajous" => {
                if dim != 2 {
                    bail!("the lissajous curve is planar; manifold dimension is {}", dim);
                }
                let [a, b] = self.curve.amplitude.unwrap_or([1.0, 0.5]);
                Ok(BaseCurve::lissajous(a, b))
            }
            other => bail!("unknown curve {other:?} (line, circle, lissajous or csv)"),
        }
    }

    pub fn measure(name: &str, fixed_rate: Option<f64>, fixed_mean: Option<f64>) -> anyhow::Result<JumpMeasureSpec> {
        if name == "fixed" {
            let rate = fixed_rate.unwrap_or(2.0);
            let mean = fixed_mean.unwrap_or(0.2);
            return Ok(JumpMeasureSpec::fixed_exponential(rate, mean));
        }
        JumpMeasureSpec::by_name(name)
            .ok_or_else(|| anyhow::anyhow!("unknown jump measure family {name:?}"))
    }
}

fn unit_direction(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1.0;
    v
}
