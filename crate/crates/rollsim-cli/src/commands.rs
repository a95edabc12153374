//! Command implementations: each is a pure function of (config, seed) to
//! bytes on disk.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;

use rollsim_core::development::{develop, project, stochastic_develop, trace_length};
use rollsim_core::geometry::{Manifold, ManifoldPoint, OrthonormalFrame};
use rollsim_core::io;
use rollsim_core::ldp::{
    rare_event_scan, rate_of_base_path, rate_of_frame_path, tightness_diagnostic, OptimizerConfig,
    PerturbationMode, ScanConfig,
};
use rollsim_core::paths::{sample_brownian_stream, uniform_grid, PathRole, SampledPath};
use rollsim_core::rotation::SkewBasis;
use rollsim_core::slipping::{
    brownian_perturb_stream, inplace_slip, piecewise_linear_approx, sample_schedule_stream,
    translational_slip, DriftField,
};

use crate::config::RunConfig;

/// Canonical start frame: on flat backends the rolling starts at the
/// curve's own start point (so the trace reproduces the curve exactly);
/// curved backends use their distinguished base point.
pub fn start_frame(
    manifold: &Manifold,
    curve: &rollsim_core::slipping::BaseCurve,
) -> anyhow::Result<OrthonormalFrame> {
    let x0 = match manifold {
        Manifold::Sphere { dim } => {
            let mut c = vec![0.0; dim + 1];
            c[*dim] = 1.0;
            ManifoldPoint::from_slice(&c)
        }
        Manifold::HalfPlane => ManifoldPoint::from_slice(&[0.0, 1.0]),
        _ => {
            let mut p = ManifoldPoint::new(curve.position(0.0));
            manifold.canonicalize(&mut p);
            p
        }
    };
    Ok(manifold.canonical_frame(&x0)?)
}

fn out_file(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    let mut w = out_file(dir, name)?;
    let text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

#[derive(Serialize)]
struct DevelopSummary {
    manifold: io::ManifoldSpecJson,
    curve: String,
    t: f64,
    h: f64,
    seed: u64,
    trace_length: f64,
    endpoint: Vec<f64>,
    endpoint_distance_to_start: f64,
    max_raw_defect: f64,
    max_frame_defect: f64,
}

pub fn cmd_develop(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<()> {
    let manifold = cfg.manifold()?;
    let curve = cfg.curve()?;
    let grid = uniform_grid(cfg.grid.t, cfg.grid.h)?;
    let gamma = curve.sample(&grid)?;
    let u0 = start_frame(&manifold, &curve)?;
    let frames = develop(&manifold, &u0, &gamma)?;
    let trace = project(&frames);

    io::write_trace_csv(&trace, out_file(out_dir, "trace.csv")?)?;
    io::write_frames_csv(&frames, out_file(out_dir, "frames.csv")?)?;
    let start = &trace.points[0];
    let end = trace.points.last().unwrap();
    let summary = DevelopSummary {
        manifold: cfg.manifold.clone(),
        curve: cfg.curve.name.clone(),
        t: cfg.grid.t,
        h: cfg.grid.h,
        seed: cfg.seed,
        trace_length: trace_length(&manifold, &trace)?,
        endpoint: end.coords.iter().copied().collect(),
        endpoint_distance_to_start: manifold.distance(start, end)?,
        max_raw_defect: frames.max_raw_defect,
        max_frame_defect: frames.max_defect(&manifold)?,
    };
    write_json(out_dir, "summary.json", &summary)
}

#[derive(Serialize)]
struct RollEpsSummary {
    eps: f64,
    jumps: usize,
    total_slip: f64,
    sup_planar_deviation: f64,
    trace_length: f64,
    max_frame_defect: f64,
}

#[derive(Serialize)]
struct RollSummary {
    mode: String,
    measure: String,
    twist_eps: f64,
    seed: u64,
    runs: Vec<RollEpsSummary>,
}

pub fn cmd_roll(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<()> {
    let manifold = cfg.manifold()?;
    let curve = cfg.curve()?;
    let grid = uniform_grid(cfg.grid.t, cfg.grid.h)?;
    let u0 = start_frame(&manifold, &curve)?;
    let basis = SkewBasis::new(manifold.dim())?;
    let original = curve.sample(&grid)?;
    io::write_path_csv(&original, out_file(out_dir, "original.csv")?)?;

    let mut runs = Vec::new();
    for (i, &eps) in cfg.roll.eps.iter().enumerate() {
        let mut jumps = 0usize;
        let mut total_slip = 0.0;
        let perturbed: SampledPath = match cfg.roll.mode.as_str() {
            "none" => curve.sample(&grid)?,
            "brownian" => {
                let b = DriftField::from_curve_velocity(&curve);
                brownian_perturb_stream(&b, &curve.position(0.0), eps, &grid, cfg.seed, 3 * i as u64 + 1)?
            }
            mode => {
                let spec = RunConfig::measure(
                    &cfg.roll.measure,
                    cfg.roll.fixed_rate,
                    cfg.roll.fixed_mean_jump,
                )?;
                let schedule =
                    sample_schedule_stream(&spec, eps, cfg.grid.t, cfg.seed, 3 * i as u64)?;
                jumps = schedule.len();
                total_slip = schedule.total_slip();
                write_json(out_dir, &format!("schedule_{i}.json"), &schedule)?;
                match mode {
                    "translational" => translational_slip(&curve, &schedule, &grid)?,
                    "in-place" => inplace_slip(&curve, &schedule, &grid)?,
                    "piecewise-linear" => piecewise_linear_approx(&curve, &schedule, &grid)?,
                    other => bail!("unknown slipping mode {other:?}"),
                }
            }
        };
        io::write_path_csv(&perturbed, out_file(out_dir, &format!("perturbed_{i}.csv"))?)?;

        // Roll along the perturbed curve, optionally with twisting noise.
        let driver = SampledPath::new(
            perturbed.grid.clone(),
            perturbed.values.clone(),
            PathRole::FiniteVariation,
        )?;
        let frames = if cfg.roll.twist_eps > 0.0 {
            let w = sample_brownian_stream(
                basis.len(),
                &driver.grid,
                cfg.roll.twist_eps,
                cfg.seed,
                3 * i as u64 + 2,
            )?;
            stochastic_develop(&manifold, &u0, &driver, &w)?
        } else {
            develop(&manifold, &u0, &driver)?
        };
        let trace = project(&frames);
        io::write_trace_csv(&trace, out_file(out_dir, &format!("trace_{i}.csv"))?)?;

        let base_on_grid = curve.sample(&perturbed.grid)?;
        let sup_dev = perturbed
            .values
            .iter()
            .zip(&base_on_grid.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        runs.push(RollEpsSummary {
            eps,
            jumps,
            total_slip,
            sup_planar_deviation: sup_dev,
            trace_length: trace_length(&manifold, &trace)?,
            max_frame_defect: frames.max_defect(&manifold)?,
        });
    }
    let summary = RollSummary {
        mode: cfg.roll.mode.clone(),
        measure: cfg.roll.measure.clone(),
        twist_eps: cfg.roll.twist_eps,
        seed: cfg.seed,
        runs,
    };
    write_json(out_dir, "summary.json", &summary)
}

pub fn cmd_rate(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<()> {
    let manifold = cfg.manifold()?;
    let curve = cfg.curve()?;
    let grid = uniform_grid(cfg.grid.t, cfg.grid.h)?;
    let gamma = curve.sample(&grid)?;
    let u0 = start_frame(&manifold, &curve)?;
    let target = develop(&manifold, &u0, &gamma)?;
    let b = match cfg.rate.field.as_str() {
        "curve-velocity" => DriftField::from_curve_velocity(&curve),
        "zero" => DriftField::zero(manifold.dim()),
        other => bail!("unknown drift field {other:?}"),
    };
    let opt = OptimizerConfig {
        control_nodes: cfg.rate.control_nodes,
        budget: cfg.rate.budget,
        feasibility_tol: cfg.rate.feasibility_tol,
        ..OptimizerConfig::default()
    };
    let report = match cfg.rate.target.as_str() {
        "frame" => rate_of_frame_path(&manifold, &target, &b, &opt)?,
        "base" => rate_of_base_path(&manifold, &project(&target), &u0, &b, &opt)?,
        other => bail!("unknown rate target {other:?} (frame or base)"),
    };
    write_json(out_dir, "rate.json", &report)
}

#[derive(Serialize)]
struct ScanSummary {
    mode: String,
    eta: f64,
    replicas: usize,
    seed: u64,
    eps: Vec<f64>,
    flags: Vec<Option<&'static str>>,
}

pub fn cmd_scan(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<()> {
    let manifold = cfg.manifold()?;
    let curve = cfg.curve()?;
    let u0 = start_frame(&manifold, &curve)?;
    let mode = match cfg.scan.mode.as_str() {
        "none" => PerturbationMode::None,
        "brownian" => PerturbationMode::Brownian,
        other => {
            let spec = RunConfig::measure(
                &cfg.scan.measure,
                cfg.scan.fixed_rate,
                cfg.scan.fixed_mean_jump,
            )?;
            match other {
                "translational" => PerturbationMode::Translational(spec),
                "in-place" => PerturbationMode::InPlace(spec),
                "piecewise-linear" => PerturbationMode::PiecewiseLinear(spec),
                _ => bail!("unknown scan mode {other:?}"),
            }
        }
    };
    let scan_cfg = ScanConfig {
        mode,
        twist: cfg.scan.twist,
        t: cfg.grid.t,
        h: cfg.grid.h,
        eta: cfg.scan.eta,
        eps_grid: cfg.scan.eps.clone(),
        replicas: cfg.scan.replicas,
        seed: cfg.seed,
    };
    let table = rare_event_scan(&manifold, &curve, &u0, &scan_cfg)?;
    io::write_scan_csv(&table, out_file(out_dir, "scan.csv")?)?;
    let summary = ScanSummary {
        mode: cfg.scan.mode.clone(),
        eta: cfg.scan.eta,
        replicas: cfg.scan.replicas,
        seed: cfg.seed,
        eps: cfg.scan.eps.clone(),
        flags: table.rows.iter().map(|r| r.flag).collect(),
    };
    write_json(out_dir, "scan_summary.json", &summary)
}

#[derive(Serialize)]
struct CheckOutcome {
    kind: String,
    measure: String,
    expected: bool,
    verdict: bool,
    passed: bool,
}

#[derive(Serialize)]
struct CheckSummary {
    eps: Vec<f64>,
    outcomes: Vec<CheckOutcome>,
    tightness_verdict: Option<bool>,
    all_passed: bool,
}

pub fn cmd_check(cfg: &RunConfig, out_dir: &Path) -> anyhow::Result<bool> {
    let mut outcomes = Vec::new();
    for fam in &cfg.check.mean_jump {
        let spec = RunConfig::measure(&fam.measure, None, None)?;
        let table = rollsim_core::slipping::check_mean_jump_condition(&spec, &cfg.check.eps)?;
        io::write_condition_csv(
            &table,
            out_file(out_dir, &format!("mean_jump_{}.csv", fam.measure))?,
        )?;
        outcomes.push(CheckOutcome {
            kind: "mean-jump".into(),
            measure: fam.measure.clone(),
            expected: fam.expect,
            verdict: table.verdict,
            passed: table.verdict == fam.expect,
        });
    }
    for fam in &cfg.check.rate_divergence {
        let spec = RunConfig::measure(&fam.measure, None, None)?;
        let table = rollsim_core::slipping::check_rate_divergence(&spec, &cfg.check.eps)?;
        io::write_condition_csv(
            &table,
            out_file(out_dir, &format!("rate_divergence_{}.csv", fam.measure))?,
        )?;
        outcomes.push(CheckOutcome {
            kind: "rate-divergence".into(),
            measure: fam.measure.clone(),
            expected: fam.expect,
            verdict: table.verdict,
            passed: table.verdict == fam.expect,
        });
    }
    let mut tightness_verdict = None;
    if let Some(tc) = &cfg.check.tightness {
        let grid = uniform_grid(cfg.grid.t, cfg.grid.h)?;
        let ensembles: Vec<(f64, Vec<SampledPath>)> = tc
            .eps
            .iter()
            .enumerate()
            .map(|(i, &eps)| {
                let paths = (0..tc.replicas)
                    .map(|r| {
                        sample_brownian_stream(
                            cfg.manifold.dim,
                            &grid,
                            eps,
                            cfg.seed,
                            (i * tc.replicas + r) as u64,
                        )
                    })
                    .collect::<rollsim_core::Result<Vec<_>>>()?;
                Ok((eps, paths))
            })
            .collect::<rollsim_core::Result<Vec<_>>>()?;
        let table =
            tightness_diagnostic(&ensembles, cfg.grid.t, &tc.a_grid, &tc.eta_grid, tc.rho)?;
        io::write_tightness_csv(&table, out_file(out_dir, "tightness.csv")?)?;
        tightness_verdict = Some(table.verdict);
    }
    let all_passed = outcomes.iter().all(|o| o.passed);
    let summary = CheckSummary {
        eps: cfg.check.eps.clone(),
        outcomes,
        tightness_verdict,
        all_passed,
    };
    write_json(out_dir, "check_summary.json", &summary)?;
    Ok(all_passed)
}
