//! File formats: curves and R-space points as JSON, trajectories and
//! diagnostics as CSV, geodesic paths as a directory with a manifest.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curve::{DiscreteCurve, Vec2, VectorField};
use crate::error::{Error, Result};
use crate::geodesic::GeodesicPath;
use crate::hamiltonian::Simulation;
use crate::metric::MetricId;
use crate::rtransform::RPoint;

#[derive(Serialize, Deserialize)]
struct CurveFile {
    closed: bool,
    points: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct FieldFile {
    values: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct RPointFile {
    metric: String,
    closed: bool,
    q: Vec<Vec<f64>>,
}

pub fn curve_to_json(c: &DiscreteCurve) -> Result<String> {
    let f = CurveFile { closed: c.is_closed(), points: c.points().iter().map(|p| [p.x, p.y]).collect() };
    Ok(serde_json::to_string_pretty(&f)?)
}

pub fn curve_from_json(s: &str) -> Result<DiscreteCurve> {
    let f: CurveFile = serde_json::from_str(s)?;
    DiscreteCurve::new(f.points.iter().map(|p| Vec2::new(p[0], p[1])).collect(), f.closed)
}

pub fn field_to_json(h: &VectorField) -> Result<String> {
    Ok(serde_json::to_string_pretty(&FieldFile { values: h.values().iter().map(|p| [p.x, p.y]).collect() })?)
}

pub fn field_from_json(s: &str) -> Result<VectorField> {
    let f: FieldFile = serde_json::from_str(s)?;
    Ok(VectorField(f.values.iter().map(|p| Vec2::new(p[0], p[1])).collect()))
}

pub fn rpoint_to_json(q: &RPoint) -> Result<String> {
    let f = RPointFile { metric: q.metric.name().to_string(), closed: q.closed, q: q.rows() };
    Ok(serde_json::to_string_pretty(&f)?)
}

pub fn rpoint_from_json(s: &str) -> Result<RPoint> {
    let f: RPointFile = serde_json::from_str(s)?;
    let id: MetricId = f.metric.parse()?;
    RPoint::from_rows(id, f.closed, &f.q)
}

fn read_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?.read_to_string(&mut s)?;
    Ok(s)
}

fn write_string(path: &Path, s: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    f.write_all(s.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<DiscreteCurve> {
    curve_from_json(&read_string(path)?)
}

pub fn write_curve(path: &Path, c: &DiscreteCurve) -> Result<()> {
    write_string(path, &curve_to_json(c)?)
}

pub fn read_field(path: &Path) -> Result<VectorField> {
    field_from_json(&read_string(path)?)
}

pub fn write_field(path: &Path, h: &VectorField) -> Result<()> {
    write_string(path, &field_to_json(h)?)
}

pub fn read_rpoint(path: &Path) -> Result<RPoint> {
    rpoint_from_json(&read_string(path)?)
}

pub fn write_rpoint(path: &Path, q: &RPoint) -> Result<()> {
    write_string(path, &rpoint_to_json(q)?)
}

/// One row per (time, sample): `t, k, q1..qd, p1..pd`.
pub fn write_trajectory_csv<W: Write>(w: W, sim: &Simulation) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = sim.states.first() else {
        out.flush()?;
        return Ok(());
    };
    let d = first.metric.dim();
    let mut header = vec!["t".to_string(), "k".to_string()];
    header.extend((1..=d).map(|i| format!("q{i}")));
    header.extend((1..=d).map(|i| format!("p{i}")));
    out.write_record(&header)?;
    for s in &sim.states {
        for k in 0..s.q.len() / d {
            let mut row = vec![s.t.to_string(), k.to_string()];
            row.extend(s.q[k * d..(k + 1) * d].iter().map(f64::to_string));
            row.extend(s.p[k * d..(k + 1) * d].iter().map(f64::to_string));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t, E, |H|inf, hiddenNorm` per stored step.
pub fn write_diagnostics_csv<W: Write>(w: W, sim: &Simulation) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "E", "H_inf", "hidden_norm"])?;
    for d in &sim.diagnostics {
        out.write_record([d.t, d.energy, d.constraint_norm, d.hidden_norm].map(|x| x.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PathManifest {
    pub metric: String,
    pub samples: usize,
    pub times: Vec<f64>,
    pub curves: Vec<String>,
    pub diagnostics: String,
    pub length: f64,
    pub endpoint_mismatch: Option<f64>,
}

/// Writes `manifest.json`, `curve_XXXX.json` per snapshot, `points.csv`
/// (`snapshot, t, k, x, y`, convenient for plotting) and `diagnostics.csv`.
pub fn export_path(dir: &Path, path: &GeodesicPath) -> Result<PathManifest> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(path.len());
    for (j, c) in path.curves.iter().enumerate() {
        let name = format!("curve_{j:04}.json");
        write_curve(&dir.join(&name), c)?;
        names.push(name);
    }
    let mut pts = csv::Writer::from_path(dir.join("points.csv"))?;
    pts.write_record(["snapshot", "t", "k", "x", "y"])?;
    for (j, (c, t)) in path.curves.iter().zip(&path.times).enumerate() {
        for (k, p) in c.points().iter().enumerate() {
            pts.write_record([j.to_string(), t.to_string(), k.to_string(), p.x.to_string(), p.y.to_string()])?;
        }
    }
    pts.flush()?;

    let dg = &path.diagnostics;
    let mut w = csv::Writer::from_path(dir.join("diagnostics.csv"))?;
    w.write_record(["t", "speed_sq", "H_inf", "hidden_norm", "horizontality"])?;
    let cell = |v: &[f64], j: usize| v.get(j).map(f64::to_string).unwrap_or_default();
    for (j, t) in path.times.iter().enumerate() {
        w.write_record([t.to_string(), cell(&dg.speed_sq, j), cell(&dg.constraint_norm, j), cell(&dg.hidden_norm, j), cell(&dg.horizontality, j)])?;
    }
    w.flush()?;

    let manifest = PathManifest {
        metric: path.metric.name().to_string(),
        samples: path.curves.first().map_or(0, DiscreteCurve::len),
        times: path.times.clone(),
        curves: names,
        diagnostics: "diagnostics.csv".into(),
        length: path.length(),
        endpoint_mismatch: dg.endpoint_mismatch,
    };
    write_string(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads the snapshot curves listed in a manifest.
pub fn import_path_curves(dir: &Path) -> Result<(PathManifest, Vec<DiscreteCurve>)> {
    let m: PathManifest = serde_json::from_str(&read_string(&dir.join("manifest.json"))?)?;
    let curves = m.curves.iter().map(|n| read_curve(&PathBuf::from(dir).join(n))).collect::<Result<_>>()?;
    Ok((m, curves))
}
