//! Self-check suite behind `curveflow validate`: one quick numerical check
//! per documented invariant, each reported as a row of a pass/fail table.
//!
//! Rows marked `gating = false` compare against constants that are known to
//! be too optimistic; they are reported for information and never fail the
//! suite.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curve::{d_theta, DiscreteCurve, Vec2, VectorField};
use crate::error::Result;
use crate::geodesic::{distance, horizontal_project, horizontality_residual};
use crate::hamiltonian::{constraint_jacobian, constraint_values, initial_state, simulate, HamiltonianState};
use crate::metric::{apply_l, metric_eval, MetricId};
use crate::pointwise::{bvp2, dist2_lower_bound, dist2_lower_bound_corrected, f_integral, scal2, Point2};
use crate::rtransform::{dr, r_forward, r_inverse, rpoint_inner};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub gating: bool,
    pub detail: String,
}

impl Check {
    pub fn status(&self) -> &'static str {
        match (self.pass, self.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "KNOWN",
        }
    }
}

/// Runs every check. Errors inside a check count as failures.
pub fn run_suite(seed: u64) -> Vec<Check> {
    type Runner = fn(&mut ChaCha8Rng) -> Result<(bool, String)>;
    let checks: [(&str, &str, bool, Runner); 20] = [
        ("curve_core", "second-order derivatives", true, derivative_order),
        ("curve_core", "circle frame", true, circle_frame),
        ("metric_suite", "symmetry", true, metric_symmetry),
        ("metric_suite", "kernel of M3/M4", true, metric_kernel),
        ("rtransform", "isometry, analytic differential", true, isometry_analytic),
        ("rtransform", "isometry, finite differences", true, isometry_fd),
        ("rtransform", "round trips converge at second order", true, round_trip_order),
        ("pointwise_geometry", "F(1)", true, constant_a),
        ("pointwise_geometry", "fibre curvature -3/x^2", true, fibre_curvature),
        ("pointwise_geometry", "bvp2 endpoints and symmetries", true, bvp2_checks),
        ("pointwise_geometry", "fibre bound, factor sqrt 2", true, |r| fibre_bound(r, true)),
        ("pointwise_geometry", "fibre bound, published factor", false, |r| fibre_bound(r, false)),
        ("constrained_hamiltonian", "constraints, energy, reversibility", true, rattle_checks),
        ("constrained_hamiltonian", "constraint Jacobian", true, jacobian_fd),
        ("geodesic_api", "M1 closed-form distance", true, m1_closed_form),
        ("geodesic_api", "M1 triangle inequality", true, m1_triangle),
        ("geodesic_api", "distance symmetry", true, distance_symmetry),
        ("geodesic_api", "sqrt-length bound, factor 2", true, |r| length_bound(r, true)),
        ("geodesic_api", "sqrt-length bound, published M2 factor", false, |r| length_bound(r, false)),
        ("geodesic_api", "horizontal projection", true, horizontal),
    ];
    checks
        .iter()
        .enumerate()
        .map(|(i, (module, name, gating, run))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let (pass, detail) = run(&mut rng).unwrap_or_else(|e| (false, format!("error: {e}")));
            Check { module, name, pass, gating: *gating, detail }
        })
        .collect()
}

/// True when no gating check failed.
pub fn suite_passed(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass || !c.gating)
}

fn star(rng: &mut ChaCha8Rng, n: usize, closed: bool) -> Result<DiscreteCurve> {
    let coef: Vec<f64> = (0..6).map(|_| rng.gen_range(-0.03..0.03)).collect();
    let scale = rng.gen_range(0.7..1.4);
    DiscreteCurve::from_fn(n, closed, |t| {
        let r = scale * (1.0 + coef[0] * (2.0 * t).cos() + coef[1] * (2.0 * t).sin() + coef[2] * (3.0 * t).cos() + coef[3] * (3.0 * t).sin());
        Vec2::new(r * t.cos() + coef[4], r * t.sin() + coef[5])
    })
}

fn field(rng: &mut ChaCha8Rng, n: usize, closed: bool, amp: f64) -> VectorField {
    let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-amp..amp)).collect();
    VectorField::from_fn(n, closed, |t| Vec2::new(c[0] + c[1] * t.cos() + c[2] * (2.0 * t).sin(), c[3] + c[4] * t.sin() + c[5] * (2.0 * t).cos()))
}

/// A curve and a field suited to each metric.
fn sample(id: MetricId, rng: &mut ChaCha8Rng, n: usize) -> Result<(DiscreteCurve, VectorField)> {
    Ok(match id {
        MetricId::M1 => (star(rng, n, false)?, field(rng, n, false, 0.1)),
        MetricId::M2 => (star(rng, n, false)?, field(rng, n, false, 1.0)),
        _ => (star(rng, n, true)?, field(rng, n, true, 1.0)),
    })
}

fn in_order_window(r: f64) -> bool {
    (3.5..=4.5).contains(&r)
}

fn derivative_order(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let err = |n: usize, closed: bool| {
        let c = DiscreteCurve::from_fn(n, closed, |t| Vec2::new((2.0 * t).sin(), t.cos())).expect("valid grid");
        let d = d_theta(c.points(), closed, c.dtheta());
        c.thetas().iter().zip(&d).map(|(t, d)| (d - Vec2::new(2.0 * (2.0 * t).cos(), -t.sin())).norm()).fold(0.0, f64::max)
    };
    let ro = err(64, false) / err(128, false);
    let rc = err(64, true) / err(128, true);
    Ok((in_order_window(ro) && in_order_window(rc), format!("error ratios {ro:.2} (open), {rc:.2} (closed)")))
}

fn circle_frame(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let c = DiscreteCurve::circle(128, 2.0, Vec2::new(0.3, -1.0));
    let fr = c.frame()?;
    let dk = fr.kappa.iter().map(|k| (k - 0.5).abs()).fold(0.0, f64::max);
    let dl = (fr.length() - 2.0 * TAU).abs();
    Ok((dk < 1e-3 && dl < 1e-2 && (fr.winding() - 1.0).abs() < 1e-12, format!("|kappa - 1/r| {dk:.1e}, length error {dl:.1e}")))
}

fn metric_symmetry(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for id in MetricId::ALL {
        let (c, h) = sample(id, rng, 64)?;
        let k = field(rng, 64, c.is_closed(), 0.1);
        let (a, b) = (metric_eval(id, &c, &h, &k)?, metric_eval(id, &c, &k, &h)?);
        let scale = (metric_eval(id, &c, &h, &h)? * metric_eval(id, &c, &k, &k)?).sqrt();
        worst = worst.max((a - b).abs() / scale);
    }
    Ok((worst < 1e-12, format!("max |G(h,k) - G(k,h)| / |h||k| = {worst:.1e}")))
}

fn metric_kernel(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for id in [MetricId::M3, MetricId::M4] {
        let (c, h) = sample(id, rng, 64)?;
        let shift = VectorField::constant(64, Vec2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        worst = worst.max(metric_eval(id, &c, &shift, &shift)?.abs() / metric_eval(id, &c, &h, &h)?);
    }
    Ok((worst < 1e-12, format!("G(a, a) / G(h, h) for constant a: {worst:.1e}")))
}

fn isometry(rng: &mut ChaCha8Rng, fd: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for id in MetricId::ALL {
        for _ in 0..3 {
            let (c, h) = sample(id, rng, 128)?;
            let g = metric_eval(id, &c, &h, &h)?;
            let q = r_forward(id, &c)?;
            let dq = if fd {
                let eps = 1e-5;
                let qp = r_forward(id, &c.perturbed(&h, eps)?)?;
                let qm = r_forward(id, &c.perturbed(&h, -eps)?)?;
                qp.q.iter().zip(&qm.q).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
            } else {
                dr(id, &c, &h)?
            };
            worst = worst.max((g - rpoint_inner(&q, &dq, &dq)).abs() / g);
        }
    }
    Ok(worst)
}

fn isometry_analytic(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let w = isometry(rng, false)?;
    Ok((w < 1e-8, format!("max relative error {w:.1e}")))
}

fn isometry_fd(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let w = isometry(rng, true)?;
    Ok((w < 1e-5, format!("max relative error {w:.1e}")))
}

fn round_trip_order(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = (f64::INFINITY, 0.0f64);
    for id in MetricId::ALL {
        let closed = matches!(id, MetricId::M3 | MetricId::M4);
        let err = |n: usize| -> Result<f64> {
            let c = DiscreteCurve::from_fn(n, closed, |t| Vec2::new(1.5 * t.cos(), t.sin()))?;
            let q = r_forward(id, &c)?;
            let qq = r_forward(id, &r_inverse(&q)?)?;
            Ok(qq.q.iter().zip(&q.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        };
        let r = err(128)? / err(256)?;
        worst = (worst.0.min(r), worst.1.max(r));
    }
    Ok((in_order_window(worst.0) && in_order_window(worst.1), format!("R(R^-1(q)) error ratios in [{:.2}, {:.2}]", worst.0, worst.1)))
}

fn constant_a(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let a = f_integral(1.0)?;
    Ok(((a - 0.30358).abs() < 5e-5, format!("F(1) = {a:.6}")))
}

fn fibre_curvature(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for x in [0.5, 1.0, 2.0] {
        worst = worst.max((scal2(Point2::new(x, 0.3))? + 3.0 / (x * x)).abs());
    }
    Ok((worst < 1e-10, format!("max error {worst:.1e}")))
}

fn random_fibre_point(rng: &mut ChaCha8Rng) -> Point2 {
    Point2::new(rng.gen_range(0.3..2.0), rng.gen_range(-2.0..2.0))
}

fn bvp2_checks(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let (mut end, mut eq) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let (p0, p1) = (random_fibre_point(rng), random_fibre_point(rng));
        let g = bvp2(p0, p1, 11)?;
        let (a, b) = (g.points[0], g.points[10]);
        end = end.max((a.x - p0.x).abs() + (a.y - p0.y).abs() + (b.x - p1.x).abs() + (b.y - p1.y).abs());
        let (shift, r) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0));
        let gt = bvp2(Point2::new(p0.x, p0.y + shift), Point2::new(p1.x, p1.y + shift), 11)?;
        let gs = bvp2(Point2::new(r * p0.x, r.powi(4) * p0.y), Point2::new(r * p1.x, r.powi(4) * p1.y), 11)?;
        eq = eq.max((gt.length - g.length).abs()).max((gs.length - r * g.length).abs());
    }
    Ok((end < 1e-9 && eq < 1e-8, format!("endpoint error {end:.1e}, symmetry error {eq:.1e}")))
}

fn fibre_bound(rng: &mut ChaCha8Rng, corrected: bool) -> Result<(bool, String)> {
    let (mut worst, mut count) = (0.0f64, 0);
    for _ in 0..20 {
        let (p0, p1) = (random_fibre_point(rng), random_fibre_point(rng));
        let d = bvp2(p0, p1, 11)?.length;
        let lb = if corrected { dist2_lower_bound_corrected(p0, p1) } else { dist2_lower_bound(p0, p1) };
        worst = worst.max(lb / d);
        if lb > d * (1.0 + 1e-9) {
            count += 1;
        }
    }
    Ok((count == 0, format!("bound above distance on {count}/20 pairs, max bound/distance {worst:.4}")))
}

fn rattle_checks(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let n = 64;
    let c = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
    let h = VectorField::from_fn(n, true, |t| Vec2::new(0.0, t.sin()));
    let s0 = initial_state(MetricId::M3, &c, &h)?;
    let (t_end, dt) = (0.5, 1e-3);
    let sim = simulate(&s0, t_end, dt)?;
    let hmax = sim.diagnostics.iter().map(|d| d.constraint_norm).fold(0.0, f64::max);
    let e0 = sim.diagnostics[0].energy;
    let drift = sim.diagnostics.iter().map(|d| (d.energy - e0).abs() / e0).fold(0.0, f64::max);
    let last = sim.states.last().expect("non-empty");
    let back = HamiltonianState { p: last.p.iter().map(|x| -x).collect(), t: 0.0, ..last.clone() };
    let rev = simulate(&back, t_end, dt)?;
    let ret = rev.states.last().expect("non-empty").q.iter().zip(&s0.q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok((hmax < 1e-9 && drift < 1e-4 && ret < 1e-6, format!("max |H| {hmax:.1e}, energy drift {drift:.1e}, reverse return {ret:.1e}")))
}

fn jacobian_fd(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let c = star(rng, 32, true)?;
    let q = crate::hamiltonian::lift_curve(MetricId::M3, &c)?.q;
    let j = constraint_jacobian(MetricId::M3, &q)?.to_dense();
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for col in 0..q.len() {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[col] += eps;
        qm[col] -= eps;
        let (hp, hm) = (constraint_values(MetricId::M3, &qp)?, constraint_values(MetricId::M3, &qm)?);
        for row in 0..hp.len() {
            worst = worst.max(((hp[row] - hm[row]) / (2.0 * eps) - j[(row, col)]).abs());
        }
    }
    Ok((worst < 1e-6, format!("max |DH - FD| {worst:.1e}")))
}

fn open_circle(n: usize, r: f64) -> Result<DiscreteCurve> {
    DiscreteCurve::from_fn(n, false, |t| Vec2::new(r * t.cos(), r * t.sin()))
}

fn m1_closed_form(_: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let exact = (TAU * (16.0 * (4f64.powf(0.25) - 1.0).powi(2) + 4.0)).sqrt();
    let err = |n: usize| -> Result<f64> {
        let d = distance(MetricId::M1, &open_circle(n, 1.0)?, &open_circle(n, 4.0)?)?.distance;
        Ok((d * d - exact * exact).abs())
    };
    let (a, b) = (err(2048)?, err(4096)?);
    Ok((b < 1e-4 && in_order_window(a / b), format!("|dist^2 - closed form| = {b:.1e} at N = 4096, ratio {:.2}", a / b)))
}

fn m1_triangle(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..10 {
        let (a, b, c) = (star(rng, 64, false)?, star(rng, 64, false)?, star(rng, 64, false)?);
        let d = |x: &DiscreteCurve, y: &DiscreteCurve| distance(MetricId::M1, x, y).map(|r| r.distance);
        worst = worst.max(d(&a, &c)? - d(&a, &b)? - d(&b, &c)?);
    }
    Ok((worst <= 1e-12, format!("max d(a,c) - d(a,b) - d(b,c) = {worst:.1e}")))
}

fn distance_symmetry(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for id in [MetricId::M1, MetricId::M2] {
        for _ in 0..3 {
            let (a, b) = (star(rng, 48, false)?, star(rng, 48, false)?);
            let (x, y) = (distance(id, &a, &b)?.distance, distance(id, &b, &a)?.distance);
            worst = worst.max((x - y).abs() / x.max(1e-300));
        }
    }
    Ok((worst < 1e-8, format!("max relative asymmetry {worst:.1e}")))
}

fn length_bound(rng: &mut ChaCha8Rng, valid: bool) -> Result<(bool, String)> {
    let mut worst = f64::INFINITY;
    let mut count = 0;
    let ids: &[MetricId] = if valid { &[MetricId::M1, MetricId::M2] } else { &[MetricId::M2] };
    for &id in ids {
        for _ in 0..10 {
            let (a, b) = (star(rng, 48, false)?, star(rng, 48, false)?);
            let r = distance(id, &a, &b)?;
            let bound = if valid { r.valid_bound() } else { r.published_bound() }.unwrap_or(0.0);
            if bound > 0.0 {
                worst = worst.min(r.distance / bound);
            }
            if r.distance < bound * (1.0 - 1e-9) {
                count += 1;
            }
        }
    }
    Ok((count == 0, format!("distance below bound on {count} pairs, min distance/bound {worst:.4}")))
}

fn horizontal(rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let n = 48;
    let c = star(rng, n, true)?;
    let h = field(rng, n, true, 1.0);
    let p = horizontal_project(&c, &h)?;
    let scale = apply_l(MetricId::M3, &c, &h)?.max_norm();
    let res = horizontality_residual(MetricId::M3, &c, &p)? / scale;
    let again = horizontal_project(&c, &p)?;
    let idem = again.sub(&p).max_norm() / p.max_norm();
    Ok((res < 1e-8 && idem < 1e-8, format!("relative residual {res:.1e}, idempotence {idem:.1e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_deterministic_and_green() {
        let a = run_suite(1);
        assert_eq!(a, run_suite(1));
        for c in &a {
            assert!(c.pass || !c.gating, "{} / {}: {}", c.module, c.name, c.detail);
        }
        assert!(suite_passed(&a));
    }
}
