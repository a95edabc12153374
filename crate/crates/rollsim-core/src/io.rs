//! CSV and JSON emission for paths, traces, tables and reports.
//!
//! Floats are written with 17 significant digits, which round-trips f64
//! exactly; CSV files re-read bit-identically. JSON envelopes carry the role
//! tag and, when present, the semimartingale decomposition. Non-finite
//! values serialize as the strings "inf", "-inf", "nan".

use std::io::{BufRead, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::development::{FramePath, ManifoldPath};
use crate::error::{Result, RollError};
use crate::geometry::Manifold;
use crate::ldp::{ScanTable, TightnessTable};
use crate::paths::{Decomposition, MatrixPath, PathRole, SampledPath};
use crate::rotation::RotationPath;
use crate::slipping::ConditionTable;

/// 17 significant digits: exact f64 round trip.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    match s {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        "nan" => Ok(f64::NAN),
        _ => s
            .trim()
            .parse::<f64>()
            .map_err(|e| RollError::Serialize(format!("bad float {s:?}: {e}"))),
    }
}

/// Writes a path as CSV with columns `t,v_1..v_m`.
pub fn write_path_csv<W: Write>(path: &SampledPath, mut w: W) -> Result<()> {
    let m = path.value_dim();
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=m).map(|i| format!("v_{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, v) in path.grid.iter().zip(&path.values) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(v.iter().map(|x| fmt_f64(*x)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Reads a `t,v_1..v_m` CSV back into a path with the given role.
pub fn read_path_csv<R: BufRead>(r: R, role: PathRole) -> Result<SampledPath> {
    let mut grid = Vec::new();
    let mut values = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 2 {
            return Err(RollError::Serialize(format!("short CSV row {i}")));
        }
        grid.push(parse_f64(cells[0])?);
        let vals: Vec<f64> = cells[1..]
            .iter()
            .map(|c| parse_f64(c))
            .collect::<Result<_>>()?;
        values.push(DVector::from_vec(vals));
    }
    SampledPath::new(grid, values, role)
}

/// Writes a manifold trace as CSV (`t,x_1..x_n`, ambient columns on the
/// sphere).
pub fn write_trace_csv<W: Write>(trace: &ManifoldPath, mut w: W) -> Result<()> {
    let n = trace.points.first().map_or(0, |p| p.coords.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x_{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (t, p) in trace.grid.iter().zip(&trace.points) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(p.coords.iter().map(|x| fmt_f64(*x)));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes a frame path as CSV: base columns then the frame flattened
/// column-major (`e<k>_<i>` is component `i` of frame vector `k`).
pub fn write_frames_csv<W: Write>(frames: &FramePath, mut w: W) -> Result<()> {
    let first = frames
        .frames
        .first()
        .ok_or_else(|| RollError::Grid("empty frame path".into()))?;
    let n = first.base.coords.len();
    let (rows, cols) = (first.frame.nrows(), first.frame.ncols());
    let mut header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x_{i}")))
        .collect();
    for k in 1..=cols {
        for i in 1..=rows {
            header.push(format!("e{k}_{i}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, f) in frames.grid.iter().zip(&frames.frames) {
        let mut row = vec![fmt_f64(*t)];
        row.extend(f.base.coords.iter().map(|x| fmt_f64(*x)));
        for k in 0..cols {
            for i in 0..rows {
                row.push(fmt_f64(f.frame[(i, k)]));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes a rotation path as CSV with `d^2` value columns per node
/// (row-major `g_<i>_<j>`).
pub fn write_rotation_csv<W: Write>(rot: &RotationPath, mut w: W) -> Result<()> {
    let d = rot
        .values
        .first()
        .map(|g| g.nrows())
        .ok_or_else(|| RollError::Grid("empty rotation path".into()))?;
    let mut header = vec!["t".to_string()];
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("g_{i}_{j}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, g) in rot.grid.iter().zip(&rot.values) {
        let mut row = vec![fmt_f64(*t)];
        for i in 0..d {
            for j in 0..d {
                row.push(fmt_f64(g[(i, j)]));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Writes a scan table with the fixed column set
/// `eps,R,hits,phat,ci_lo,ci_hi,eps_log_phat`.
pub fn write_scan_csv<W: Write>(table: &ScanTable, mut w: W) -> Result<()> {
    writeln!(w, "eps,R,hits,phat,ci_lo,ci_hi,eps_log_phat")?;
    for row in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_f64(row.eps),
            row.replicas,
            row.hits,
            fmt_f64(row.phat),
            fmt_f64(row.ci_lo),
            fmt_f64(row.ci_hi),
            fmt_f64(row.eps_log_phat)
        )?;
    }
    Ok(())
}

/// Writes a jump-measure condition table (`eps,value` plus a verdict footer
/// comment is left to the JSON summary).
pub fn write_condition_csv<W: Write>(table: &ConditionTable, mut w: W) -> Result<()> {
    writeln!(w, "eps,value")?;
    for row in &table.rows {
        writeln!(w, "{},{}", fmt_f64(row.eps), fmt_f64(row.value))?;
    }
    Ok(())
}

/// Writes a tightness table (`criterion,eps,threshold,R,hits,value,censored`).
pub fn write_tightness_csv<W: Write>(table: &TightnessTable, mut w: W) -> Result<()> {
    writeln!(w, "criterion,eps,threshold,R,hits,value,censored")?;
    for (name, cells) in [("sup_norm", &table.sup_norm), ("modulus", &table.modulus)] {
        for c in cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                name,
                fmt_f64(c.eps),
                fmt_f64(c.threshold),
                c.replicas,
                c.hits,
                fmt_f64(c.value),
                c.censored
            )?;
        }
    }
    Ok(())
}

/// JSON envelope of a path: role tag, grid, values, optional decomposition.
#[derive(Debug, Serialize, Deserialize)]
pub struct PathEnvelope {
    pub role: String,
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_part: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_part: Option<Vec<Vec<f64>>>,
}

fn to_rows(values: &[DVector<f64>]) -> Vec<Vec<f64>> {
    values.iter().map(|v| v.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter().map(|r| DVector::from_row_slice(r)).collect()
}

pub fn path_to_envelope(p: &SampledPath) -> PathEnvelope {
    PathEnvelope {
        role: p.role.name().to_string(),
        grid: p.grid.clone(),
        values: to_rows(&p.values),
        a_part: p.decomposition.as_ref().map(|d| to_rows(&d.a_values)),
        m_part: p.decomposition.as_ref().map(|d| to_rows(&d.m_values)),
    }
}

pub fn path_from_envelope(env: &PathEnvelope) -> Result<SampledPath> {
    let values = from_rows(&env.values);
    match env.role.as_str() {
        "deterministic" => SampledPath::new(env.grid.clone(), values, PathRole::Deterministic),
        "finite-variation" => SampledPath::new(env.grid.clone(), values, PathRole::FiniteVariation),
        "local-martingale" => SampledPath::new(env.grid.clone(), values, PathRole::LocalMartingale),
        "semimartingale" => {
            let a = env
                .a_part
                .as_ref()
                .ok_or(RollError::MissingDecomposition)?;
            let m = env
                .m_part
                .as_ref()
                .ok_or(RollError::MissingDecomposition)?;
            SampledPath::new_semimartingale(
                env.grid.clone(),
                values,
                Decomposition {
                    a_values: from_rows(a),
                    m_values: from_rows(m),
                },
            )
        }
        other => Err(RollError::Serialize(format!("unknown role {other:?}"))),
    }
}

/// Serializable manifold description `{"kind": ..., "dim": ...}`. Chart
/// backends carry callables and cannot be serialized.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifoldSpecJson {
    pub kind: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

pub fn manifold_to_spec(m: &Manifold) -> Result<ManifoldSpecJson> {
    let spec = match m {
        Manifold::Flat { dim } => ManifoldSpecJson {
            kind: "flat".into(),
            dim: *dim,
            period: None,
        },
        Manifold::Sphere { dim } => ManifoldSpecJson {
            kind: "sphere".into(),
            dim: *dim,
            period: None,
        },
        Manifold::HalfPlane => ManifoldSpecJson {
            kind: "half-plane".into(),
            dim: 2,
            period: None,
        },
        Manifold::FlatTorus { dim, period } => ManifoldSpecJson {
            kind: "flat-torus".into(),
            dim: *dim,
            period: Some(*period),
        },
        Manifold::Chart(_) => {
            return Err(RollError::Serialize(
                "chart manifolds are only constructible programmatically".into(),
            ))
        }
    };
    Ok(spec)
}

pub fn manifold_from_spec(spec: &ManifoldSpecJson) -> Result<Manifold> {
    match spec.kind.as_str() {
        "flat" => Ok(Manifold::flat(spec.dim)),
        "sphere" => Ok(Manifold::sphere(spec.dim)),
        "half-plane" => Ok(Manifold::half_plane()),
        "flat-torus" => Ok(Manifold::flat_torus(
            spec.dim,
            spec.period.unwrap_or(std::f64::consts::TAU),
        )),
        other => Err(RollError::Serialize(format!("unknown manifold kind {other:?}"))),
    }
}

/// Matrix path CSV (`t` plus row-major entries).
pub fn write_matrix_csv<W: Write>(path: &MatrixPath, mut w: W) -> Result<()> {
    let first = path
        .values
        .first()
        .ok_or_else(|| RollError::Grid("empty matrix path".into()))?;
    let (rows, cols) = (first.nrows(), first.ncols());
    let mut header = vec!["t".to_string()];
    for i in 1..=rows {
        for j in 1..=cols {
            header.push(format!("m_{i}_{j}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for (t, m) in path.grid.iter().zip(&path.values) {
        let mut row = vec![fmt_f64(*t)];
        for i in 0..rows {
            for j in 0..cols {
                row.push(fmt_f64(m[(i, j)]));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
