use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use curveflow::curve::{center, DiscreteCurve, Vec2, VectorField};
use curveflow::geodesic::{distance_with, geodesic_bvp_with, geodesic_ivp, horizontal_project, rattle_geodesic, shoot_m3, BvpOptions, GeodesicPath};
use curveflow::hamiltonian::Simulation;
use curveflow::io::{curve_to_json, export_path, read_curve, read_field, read_rpoint, rpoint_to_json, write_diagnostics_csv, write_trajectory_csv};
use curveflow::metric::MetricId;
use curveflow::pointwise::{scal2, sectional_curvature_m2, Point2};
use curveflow::rtransform::{r_forward, r_inverse};
use curveflow::validate::{run_suite, suite_passed};
use curveflow::Error;

use crate::config::RunConfig;
use crate::{Failure, UsageError};

type Outcome = Result<(), Failure>;

fn emit(output: Option<&Path>, text: &str) -> Outcome {
    match output {
        Some(p) => fs::write(p, format!("{text}\n")).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        // A closed pipe (e.g. `| head`) is not an error worth reporting.
        None => {
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }
    Ok(())
}

pub fn transform(cfg: &RunConfig, input: &Path, inverse: bool, output: Option<&Path>) -> Outcome {
    let text = if inverse {
        curve_to_json(&r_inverse(&read_rpoint(input)?)?)?
    } else {
        rpoint_to_json(&r_forward(cfg.metric, &read_curve(input)?)?)?
    };
    emit(output, &text)
}

fn rattle_stride(steps: usize, snapshots: usize) -> usize {
    (steps / (snapshots - 1)).max(1)
}

/// Path files plus, for RATTLE runs, the full R-space trajectory.
fn export(dir: &Path, path: &GeodesicPath, sim: Option<&Simulation>) -> Outcome {
    export_path(dir, path)?;
    if let Some(sim) = sim {
        let file = |name: &str| fs::File::create(dir.join(name)).map_err(|e| Error::Io(format!("{}: {e}", dir.join(name).display())));
        write_trajectory_csv(file("trajectory.csv")?, sim)?;
        write_diagnostics_csv(file("rattle_diagnostics.csv")?, sim)?;
    }
    Ok(())
}

fn summary(dir: &Path, path: &GeodesicPath) {
    println!("metric {}", path.metric);
    println!("snapshots {}", path.len());
    println!("t_end {:.6}", path.times.last().copied().unwrap_or(0.0));
    println!("length {:.12e}", path.length());
    if let Some(m) = path.diagnostics.endpoint_mismatch {
        println!("endpoint_mismatch {m:.6e}");
    }
    if let Some(h) = path.diagnostics.constraint_norm.iter().copied().reduce(f64::max) {
        println!("max_constraint_norm {h:.6e}");
    }
    println!("written {}", dir.display());
}

fn run_ivp(cfg: &RunConfig, c: &DiscreteCurve, u: &VectorField, t_end: f64, dir: &Path) -> Outcome {
    let id = cfg.metric;
    let (path, sim) = match id {
        MetricId::M1 | MetricId::M2 => (geodesic_ivp(id, c, u, t_end, cfg.snapshots - 1)?, None),
        MetricId::M3 | MetricId::M4 => {
            let steps = (t_end / cfg.dt).round().max(1.0) as usize;
            let (p, s) = rattle_geodesic(id, c, u, t_end, t_end / steps as f64, rattle_stride(steps, cfg.snapshots))?;
            (p, Some(s))
        }
    };
    export(dir, &path, sim.as_ref())?;
    summary(dir, &path);
    Ok(())
}

pub fn ivp(cfg: &RunConfig, curve: &Path, velocity: &Path) -> Outcome {
    let c = read_curve(curve)?;
    let u = read_field(velocity)?;
    run_ivp(cfg, &c, &u, cfg.t_end_or(1.0), &cfg.out_dir)
}

fn bvp_options(cfg: &RunConfig, t_end: f64) -> BvpOptions {
    BvpOptions { samples: cfg.snapshots, t_end, dt: cfg.dt, modes: cfg.modes, tol: cfg.tol, ..BvpOptions::default() }
}

pub fn bvp(cfg: &RunConfig, from: &Path, to: &Path) -> Outcome {
    let (c0, c1) = (read_curve(from)?, read_curve(to)?);
    let path = geodesic_bvp_with(cfg.metric, &c0, &c1, &bvp_options(cfg, cfg.t_end_or(1.0)))?;
    export(&cfg.out_dir, &path, None)?;
    summary(&cfg.out_dir, &path);
    Ok(())
}

pub fn distance(cfg: &RunConfig, from: &Path, to: &Path) -> Outcome {
    let (c0, c1) = (read_curve(from)?, read_curve(to)?);
    let r = distance_with(cfg.metric, &c0, &c1, &bvp_options(cfg, cfg.t_end_or(1.0)))?;
    println!("metric {}", r.metric);
    println!("distance {:.12e}", r.distance);
    println!("sqrt_length_gap {:.12e}", r.sqrt_length_gap);
    let rows = [
        ("bound_published", r.published_bound()),
        ("bound_valid", r.valid_bound()),
        ("pointwise_bound_published", r.pointwise_bound_published),
        ("pointwise_bound_corrected", r.pointwise_bound_corrected),
    ];
    for (name, v) in rows {
        if let Some(v) = v {
            println!("{name} {v:.12e}");
        }
    }
    Ok(())
}

pub fn sectional(curve: &Path, h: &Path, k: &Path) -> Outcome {
    let c = read_curve(curve)?;
    let k_m2 = sectional_curvature_m2(&c, &read_field(h)?, &read_field(k)?)?;
    println!("sectional_curvature_m2 {k_m2:.12e}");
    Ok(())
}

pub fn scal2_table(x_min: f64, x_max: f64, count: usize) -> Outcome {
    if !(x_min > 0.0 && x_max >= x_min) || count < 1 {
        return Err(UsageError(format!("need 0 < x_min <= x_max and count >= 1, got {x_min}, {x_max}, {count}")).into());
    }
    println!("x,scal2");
    for j in 0..count {
        let x = if count == 1 { x_min } else { x_min + (x_max - x_min) * j as f64 / (count - 1) as f64 };
        println!("{x},{}", scal2(Point2::new(x, 0.0))?);
    }
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Outcome {
    let checks = run_suite(cfg.seed);
    let width = checks.iter().map(|c| c.module.len() + c.name.len() + 3).max().unwrap_or(0);
    let mut out = std::io::stdout().lock();
    for c in &checks {
        let label = format!("{} / {}", c.module, c.name);
        let _ = writeln!(out, "{:<5}  {label:<width$}  {}", c.status(), c.detail);
    }
    let failed = checks.iter().filter(|c| c.status() == "FAIL").count();
    let known = checks.iter().filter(|c| c.status() == "KNOWN").count();
    let _ = writeln!(out, "{} checks, {failed} failed, {known} known discrepancies with published constants", checks.len());
    if suite_passed(&checks) {
        Ok(())
    } else {
        Err(Failure::ChecksFailed)
    }
}

fn demo_dir(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

pub fn demo_fig1(cfg: &RunConfig) -> Outcome {
    let n = cfg.samples;
    let c0 = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
    let c1 = DiscreteCurve::ellipse(n, 2.0, 1.0);
    let out = shoot_m3(&c0, &c1, &bvp_options(cfg, cfg.t_end_or(2.0)))?;
    let dir = demo_dir(cfg, "fig1");
    // A stalled solve still exports its best attempt.
    export(&dir, &out.path, None)?;
    summary(&dir, &out.path);
    println!("iterations {}", out.iterations);
    println!("modes {}", out.modes);
    if out.converged {
        Ok(())
    } else {
        Err(Error::ShootingStall { mismatch: out.mismatch }.into())
    }
}

pub fn demo_fig2(cfg: &RunConfig, which: u8) -> Outcome {
    let n = cfg.samples;
    let c = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
    let (h, t_end) = if which == 1 {
        (VectorField::from_fn(n, true, |t| Vec2::new(0.0, t.sin())), 2.0)
    } else {
        (VectorField::from_fn(n, true, |t| Vec2::new(t.cos(), t.sin()) * -(t.sin().powi(2))), 1.0)
    };
    let cfg = RunConfig { metric: MetricId::M3, ..cfg.clone() };
    run_ivp(&cfg, &c, &h, cfg.t_end_or(t_end), &demo_dir(&cfg, &format!("fig2_{which}")))
}

pub fn demo_fig3(cfg: &RunConfig) -> Outcome {
    let n = cfg.samples;
    let c = center(&DiscreteCurve::circle(n, 1.0, Vec2::zeros()))?;
    let h = VectorField::from_fn(n, true, |t| -Vec2::new(2.0 - (2.0 * t).cos(), 2.0 * (2.0 * t).sin()));
    let hh = horizontal_project(&c, &h)?;
    let cfg = RunConfig { metric: MetricId::M3, ..cfg.clone() };
    run_ivp(&cfg, &c, &hh, cfg.t_end_or(0.3), &demo_dir(&cfg, "fig3"))
}
