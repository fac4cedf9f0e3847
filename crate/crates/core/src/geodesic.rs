//! Geodesic initial and boundary value problems for the four metrics.
//!
//! M1 paths are straight lines in R-space, M2 paths are fibrewise
//! geodesics of the half-plane metric, and M3 (M4 behind the `m4`
//! feature) paths come from the constrained RATTLE integrator, with a
//! Gauss-Newton shooting method for boundary data.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::curve::{center, quadrature_weights, DiscreteCurve, Vec2, VectorField};
use crate::error::{Error, Result};
use crate::fiber::g_matrix;
use crate::hamiltonian::{
    energy_grad_p, initial_state, lift_curve, momentum_from_velocity, project_consistent, simulate, HamiltonianState,
    Simulation,
};
use crate::metric::{apply_l, hc_quadratic, metric_eval, momentum, remove_kernel, MetricId};
use crate::pointwise::{bvp2, dist2, integrate_spray2, Point2, Tangent2};
use crate::rtransform::{dr, dr_inverse, project_image, r_forward, r_inverse, rpoint_inner, RPoint};

/// Per-time monitors of a geodesic path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathDiagnostics {
    /// `G_c(c_t, c_t)` from the R-space representation.
    pub speed_sq: Vec<f64>,
    /// Sup norm of the image constraints (RATTLE paths only).
    pub constraint_norm: Vec<f64>,
    /// Sup norm of the hidden constraints (RATTLE paths only).
    pub hidden_norm: Vec<f64>,
    /// `sup |<L_c c_t, v>|` (closed curves only).
    pub horizontality: Vec<f64>,
    /// R-space distance between the end of the path and the target (BVPs).
    pub endpoint_mismatch: Option<f64>,
}

/// Time-sampled geodesic `c(t, theta)`.
#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub metric: MetricId,
    pub times: Vec<f64>,
    pub curves: Vec<DiscreteCurve>,
    /// `c_t`, modulo the kernel of the metric.
    pub velocities: Vec<VectorField>,
    /// The path in R-space.
    pub r_path: Vec<RPoint>,
    pub diagnostics: PathDiagnostics,
}

impl GeodesicPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Length `T sqrt(G(c_t, c_t))` at the initial speed.
    pub fn length(&self) -> f64 {
        let t = self.times.last().copied().unwrap_or(0.0) - self.times.first().copied().unwrap_or(0.0);
        t * self.diagnostics.speed_sq.first().copied().unwrap_or(0.0).max(0.0).sqrt()
    }
}

/// Settings for boundary value problems.
#[derive(Debug, Clone, PartialEq)]
pub struct BvpOptions {
    /// Number of time samples in the returned path.
    pub samples: usize,
    pub t_end: f64,
    /// RATTLE step used by the shooting method.
    pub dt: f64,
    /// Fourier modes per free tangent component.
    pub modes: usize,
    /// Modes added when Gauss-Newton stalls.
    pub mode_increment: usize,
    pub max_modes: usize,
    /// Convergence threshold on mismatch / path length.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BvpOptions {
    fn default() -> Self {
        BvpOptions { samples: 11, t_end: 1.0, dt: 1e-2, modes: 10, mode_increment: 5, max_modes: 20, tol: 1e-4, max_iter: 30 }
    }
}

fn check_same(c0: &DiscreteCurve, c1: &DiscreteCurve) -> Result<()> {
    if c0.len() != c1.len() {
        return Err(Error::LengthMismatch { expected: c0.len(), got: c1.len() });
    }
    if c0.is_closed() != c1.is_closed() {
        return Err(Error::ClosednessMismatch);
    }
    Ok(())
}

fn require_open(c: &DiscreteCurve) -> Result<()> {
    if c.is_closed() {
        Err(Error::ClosednessMismatch)
    } else {
        Ok(())
    }
}

fn require_closed(c: &DiscreteCurve) -> Result<()> {
    if c.is_closed() {
        Ok(())
    } else {
        Err(Error::OpenCurveUnsupported)
    }
}

fn uniform_times(k: usize, t_end: f64) -> Vec<f64> {
    let k = k.max(2);
    (0..k).map(|j| t_end * j as f64 / (k - 1) as f64).collect()
}

fn rotate_field(h: &VectorField, angle: f64) -> VectorField {
    let (s, c) = angle.sin_cos();
    VectorField(h.values().iter().map(|p| Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y)).collect())
}

/// `sup_k |<L_c h, v>_k|`: tangential part of the momentum, zero for
/// horizontal velocities.
pub fn horizontality_residual(id: MetricId, c: &DiscreteCurve, h: &VectorField) -> Result<f64> {
    let fr = c.frame()?;
    let lh = apply_l(id, c, h)?;
    Ok(lh.values().iter().zip(&fr.v).map(|(l, v)| l.dot(v).abs()).fold(0.0, f64::max))
}

/// Maps an M1/M2 R-space path back to curves, normalised so that the
/// centroid is at the origin and `\int alpha ds = 0`.
fn flat_path(id: MetricId, times: Vec<f64>, qs: Vec<RPoint>, dqs: Vec<Vec<f64>>) -> Result<GeodesicPath> {
    let mut curves = Vec::with_capacity(qs.len());
    let mut velocities = Vec::with_capacity(qs.len());
    let mut speed_sq = Vec::with_capacity(qs.len());
    for (q, dq) in qs.iter().zip(&dqs) {
        let raw = center(&r_inverse(q)?)?;
        let fr = raw.frame()?;
        let angle = -fr.integrate(&fr.alpha) / fr.length();
        let c = raw.rotated(angle);
        let v = remove_kernel(id, &c, &rotate_field(&dr_inverse(q, dq)?, angle))?;
        speed_sq.push(rpoint_inner(q, dq, dq));
        curves.push(c);
        velocities.push(v);
    }
    Ok(GeodesicPath {
        metric: id,
        times,
        curves,
        velocities,
        r_path: qs,
        diagnostics: PathDiagnostics { speed_sq, ..Default::default() },
    })
}

fn m1_line(q0: &RPoint, dq: &[f64], times: &[f64]) -> Vec<RPoint> {
    times.iter().map(|&t| q0.offset(dq, t)).collect()
}

/// First time at which a component of `q0 + t dq` reaches zero.
fn m1_exit_time(q0: &RPoint, dq: &[f64]) -> Option<f64> {
    q0.q.iter().zip(dq).filter(|(_, d)| **d < 0.0).map(|(q, d)| -q / d).min_by(f64::total_cmp)
}

fn m1_bvp(c0: &DiscreteCurve, c1: &DiscreteCurve, opts: &BvpOptions) -> Result<GeodesicPath> {
    require_open(c0)?;
    let q0 = r_forward(MetricId::M1, c0)?;
    let q1 = r_forward(MetricId::M1, c1)?;
    let t_end = opts.t_end;
    let dq: Vec<f64> = q1.q.iter().zip(&q0.q).map(|(b, a)| (b - a) / t_end).collect();
    let times = uniform_times(opts.samples, t_end);
    let qs = m1_line(&q0, &dq, &times);
    let n = qs.len();
    flat_path(MetricId::M1, times, qs, vec![dq; n])
}

fn m1_ivp(c0: &DiscreteCurve, u0: &VectorField, t_end: f64, steps: usize) -> Result<GeodesicPath> {
    require_open(c0)?;
    let q0 = r_forward(MetricId::M1, c0)?;
    let dq = dr(MetricId::M1, c0, u0)?;
    if let Some(t) = m1_exit_time(&q0, &dq) {
        if t <= t_end {
            return Err(Error::DomainExit { exit_time: t });
        }
    }
    let times = uniform_times(steps + 1, t_end);
    let qs = m1_line(&q0, &dq, &times);
    let n = qs.len();
    flat_path(MetricId::M1, times, qs, vec![dq; n])
}

fn fibre(q: &RPoint, k: usize) -> Point2 {
    let s = q.sample(k);
    Point2::new(s[0], s[1])
}

fn m2_assemble(q0: &RPoint, times: Vec<f64>, fibres: Vec<Vec<(Point2, Tangent2)>>) -> Result<GeodesicPath> {
    let mut qs = Vec::with_capacity(times.len());
    let mut dqs = Vec::with_capacity(times.len());
    for j in 0..times.len() {
        let mut q = Vec::with_capacity(2 * fibres.len());
        let mut dq = Vec::with_capacity(2 * fibres.len());
        for f in &fibres {
            let (p, v) = f[j];
            q.extend([p.x, p.y]);
            dq.extend([v.dx, v.dy]);
        }
        qs.push(RPoint::new(MetricId::M2, q0.closed, q)?);
        dqs.push(dq);
    }
    flat_path(MetricId::M2, times, qs, dqs)
}

fn m2_bvp(c0: &DiscreteCurve, c1: &DiscreteCurve, opts: &BvpOptions) -> Result<GeodesicPath> {
    require_open(c0)?;
    let q0 = r_forward(MetricId::M2, c0)?;
    let q1 = r_forward(MetricId::M2, c1)?;
    let times = uniform_times(opts.samples, opts.t_end);
    let k = times.len();
    let t_end = opts.t_end;
    let fibres: Vec<Vec<(Point2, Tangent2)>> = (0..q0.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<(Point2, Tangent2)>> {
            let g = bvp2(fibre(&q0, i), fibre(&q1, i), k)?;
            Ok(g.points.into_iter().zip(g.velocities).map(|(p, v)| (p, Tangent2::new(v.dx / t_end, v.dy / t_end))).collect())
        })
        .collect::<Result<_>>()?;
    m2_assemble(&q0, times, fibres)
}

fn m2_ivp(c0: &DiscreteCurve, u0: &VectorField, t_end: f64, steps: usize) -> Result<GeodesicPath> {
    require_open(c0)?;
    let q0 = r_forward(MetricId::M2, c0)?;
    let dq = dr(MetricId::M2, c0, u0)?;
    let steps = steps.max(1);
    let dt = t_end / steps as f64;
    let results: Vec<Result<Vec<(Point2, Tangent2)>>> = (0..q0.len())
        .into_par_iter()
        .map(|i| integrate_spray2(fibre(&q0, i), Tangent2::new(dq[2 * i], dq[2 * i + 1]), dt, steps))
        .collect();
    let mut exit: Option<f64> = None;
    let mut fibres = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(f) => fibres.push(f),
            Err(Error::DomainExit { exit_time }) => exit = Some(exit.map_or(exit_time, |e: f64| e.min(exit_time))),
            Err(e) => return Err(e),
        }
    }
    if let Some(exit_time) = exit {
        return Err(Error::DomainExit { exit_time });
    }
    m2_assemble(&q0, uniform_times(steps + 1, t_end), fibres)
}

fn check_rattle_metric(id: MetricId) -> Result<()> {
    match id {
        MetricId::M3 => Ok(()),
        MetricId::M4 if cfg!(feature = "m4") => Ok(()),
        _ => Err(Error::UnsupportedMetric(id.name())),
    }
}

/// Curves, velocities and monitors along a RATTLE simulation, keeping
/// every `stride`-th state.
fn rattle_path(sim: &Simulation, stride: usize) -> Result<GeodesicPath> {
    let id = sim.states[0].metric;
    let stride = stride.max(1);
    let mut path = GeodesicPath {
        metric: id,
        times: Vec::new(),
        curves: Vec::new(),
        velocities: Vec::new(),
        r_path: Vec::new(),
        diagnostics: PathDiagnostics::default(),
    };
    for (j, (s, d)) in sim.states.iter().zip(&sim.diagnostics).enumerate() {
        if j % stride != 0 && j + 1 != sim.states.len() {
            continue;
        }
        let q = s.rpoint();
        let c = center(&r_inverse(&q)?)?;
        let k = energy_grad_p(id, &s.q, &s.p);
        let v = remove_kernel(id, &c, &dr_inverse(&q, &k)?)?;
        path.diagnostics.horizontality.push(horizontality_residual(id, &c, &v)?);
        // E = 1/2 sum g(k, k) / dtheta, so G(c_t, c_t) = 2 E dtheta^2.
        path.diagnostics.speed_sq.push(2.0 * d.energy * q.dtheta().powi(2));
        path.diagnostics.constraint_norm.push(d.constraint_norm);
        path.diagnostics.hidden_norm.push(d.hidden_norm);
        path.times.push(s.t);
        path.curves.push(c);
        path.velocities.push(v);
        path.r_path.push(q);
    }
    Ok(path)
}

/// Consistent initial state for a RATTLE geodesic: the curve is centered
/// and the kernel part of `u0` removed before lifting.
pub fn rattle_initial_state(id: MetricId, c0: &DiscreteCurve, u0: &VectorField) -> Result<HamiltonianState> {
    check_rattle_metric(id)?;
    require_closed(c0)?;
    let c = center(c0)?;
    let u = remove_kernel(id, &c, u0)?;
    initial_state(id, &c, &u)
}

fn rattle_ivp(id: MetricId, c0: &DiscreteCurve, u0: &VectorField, t_end: f64, steps: usize) -> Result<GeodesicPath> {
    let s0 = rattle_initial_state(id, c0, u0)?;
    let steps = steps.max(1);
    let sim = simulate(&s0, t_end, t_end / steps as f64)?;
    rattle_path(&sim, 1)
}

/// RATTLE geodesic with step `dt`, keeping every `stride`-th state in the
/// path. The full simulation is returned alongside for trajectory export.
pub fn rattle_geodesic(id: MetricId, c0: &DiscreteCurve, u0: &VectorField, t_end: f64, dt: f64, stride: usize) -> Result<(GeodesicPath, Simulation)> {
    let s0 = rattle_initial_state(id, c0, u0)?;
    let sim = simulate(&s0, t_end, dt)?;
    let path = rattle_path(&sim, stride)?;
    Ok((path, sim))
}

/// Geodesic with initial curve `c0` and velocity `u0` on `[0, t_end]`,
/// sampled at `steps + 1` uniform times.
pub fn geodesic_ivp(id: MetricId, c0: &DiscreteCurve, u0: &VectorField, t_end: f64, steps: usize) -> Result<GeodesicPath> {
    if u0.len() != c0.len() {
        return Err(Error::LengthMismatch { expected: c0.len(), got: u0.len() });
    }
    if !(t_end > 0.0) {
        return Err(Error::OutOfRange { value: t_end, lo: 0.0, hi: f64::INFINITY });
    }
    match id {
        MetricId::M1 => m1_ivp(c0, u0, t_end, steps),
        MetricId::M2 => m2_ivp(c0, u0, t_end, steps),
        MetricId::M3 | MetricId::M4 => rattle_ivp(id, c0, u0, t_end, steps),
    }
}

/// Result of the shooting method, converged or not.
#[derive(Debug, Clone)]
pub struct ShootingOutcome {
    pub path: GeodesicPath,
    pub converged: bool,
    /// `|q(T) - R(c1)|` in the R-space norm.
    pub mismatch: f64,
    pub iterations: usize,
    pub modes: usize,
}

struct Shooter {
    q0: RPoint,
    target: Vec<f64>,
    /// Per-sample Cholesky factor of `dtheta g(target)`.
    weight: Vec<DMatrix<f64>>,
    steps: usize,
    t_end: f64,
}

impl Shooter {
    fn new(c0: &DiscreteCurve, c1: &DiscreteCurve, opts: &BvpOptions) -> Result<Self> {
        let id = MetricId::M3;
        let q0 = lift_curve(id, &center(c0)?)?;
        let mut target = lift_curve(id, &center(c1)?)?.q;
        let n = q0.len();
        // Align the angle lifts: both are continuous, so a single shift by
        // a multiple of 2 pi brings them together.
        let mean: f64 = (0..n).map(|k| target[3 * k + 1] - q0.q[3 * k + 1]).sum::<f64>() / n as f64;
        let shift = (mean / std::f64::consts::TAU).round() * std::f64::consts::TAU;
        for k in 0..n {
            target[3 * k + 1] -= shift;
        }
        let dth = q0.dtheta();
        let weight = (0..n)
            .map(|k| {
                let g = g_matrix(id, &target[3 * k..3 * k + 3]) * dth;
                g.cholesky().map(|c| c.l().transpose()).ok_or(Error::SingularSystem)
            })
            .collect::<Result<_>>()?;
        let k = opts.samples.max(2) - 1;
        let per = ((opts.t_end / opts.dt) / k as f64).ceil().max(1.0) as usize;
        Ok(Shooter { q0, target, weight, steps: per * k, t_end: opts.t_end })
    }

    fn dt(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    /// Fourier synthesis of the two free tangent components.
    fn velocity(&self, x: &[f64], modes: usize) -> Result<Vec<f64>> {
        let n = self.q0.len();
        let thetas = crate::curve::theta_grid(n, true);
        let mut raw = vec![0.0; 3 * n];
        let per = 2 * modes + 1;
        for (k, &th) in thetas.iter().enumerate() {
            for comp in 0..2 {
                let c = &x[comp * per..(comp + 1) * per];
                let mut v = c[0];
                for m in 1..=modes {
                    let (s, co) = (m as f64 * th).sin_cos();
                    v += c[2 * m - 1] * co + c[2 * m] * s;
                }
                raw[3 * k + comp] = v;
            }
        }
        project_image(&self.q0, &raw)
    }

    fn initial_state(&self, x: &[f64], modes: usize) -> Result<HamiltonianState> {
        let k = self.velocity(x, modes)?;
        let p = momentum_from_velocity(MetricId::M3, &self.q0.q, &k);
        project_consistent(MetricId::M3, &self.q0.q, &p)
    }

    fn residual_of(&self, q: &[f64]) -> DVector<f64> {
        let n = self.q0.len();
        let mut r = DVector::zeros(3 * n);
        for k in 0..n {
            let d = nalgebra::Vector3::new(
                self.target[3 * k] - q[3 * k],
                self.target[3 * k + 1] - q[3 * k + 1],
                self.target[3 * k + 2] - q[3 * k + 2],
            );
            let w = &self.weight[k] * d;
            r.rows_mut(3 * k, 3).copy_from(&w);
        }
        r
    }

    /// Endpoint residual; `None` when the trajectory leaves the domain.
    fn residual(&self, x: &[f64], modes: usize) -> Option<DVector<f64>> {
        let s0 = self.initial_state(x, modes).ok()?;
        let sim = simulate(&s0, self.t_end, self.dt()).ok()?;
        Some(self.residual_of(&sim.states.last()?.q))
    }

    /// Forward-difference Jacobian of the endpoint residual, columns in parallel.
    fn jacobian(&self, x: &[f64], r: &DVector<f64>, modes: usize) -> Result<DMatrix<f64>> {
        let cols: Vec<Option<DVector<f64>>> = (0..x.len())
            .into_par_iter()
            .map(|j| {
                let eps = 1e-6 * x[j].abs().max(1e-2);
                let mut xp = x.to_vec();
                xp[j] += eps;
                self.residual(&xp, modes).map(|rp| (rp - r) / eps)
            })
            .collect();
        let mut jac = DMatrix::zeros(r.len(), x.len());
        for (j, c) in cols.into_iter().enumerate() {
            jac.set_column(j, &c.ok_or(Error::SolverFailure("finite-difference shot left the domain".into()))?);
        }
        Ok(jac)
    }

    /// Least-squares Fourier coefficients of `(target - q0) / T`.
    fn initial_guess(&self, modes: usize) -> Vec<f64> {
        let n = self.q0.len();
        let thetas = crate::curve::theta_grid(n, true);
        let per = 2 * modes + 1;
        let mut x = vec![0.0; 2 * per];
        for comp in 0..2 {
            let f: Vec<f64> = (0..n).map(|k| (self.target[3 * k + comp] - self.q0.q[3 * k + comp]) / self.t_end).collect();
            let c = &mut x[comp * per..(comp + 1) * per];
            c[0] = f.iter().sum::<f64>() / n as f64;
            for m in 1..=modes.min((n - 1) / 2) {
                for (k, &th) in thetas.iter().enumerate() {
                    let (s, co) = (m as f64 * th).sin_cos();
                    c[2 * m - 1] += 2.0 * f[k] * co / n as f64;
                    c[2 * m] += 2.0 * f[k] * s / n as f64;
                }
            }
        }
        x
    }
}

/// Pads coefficient vectors from `from` to `to` modes per component.
fn widen(x: &[f64], from: usize, to: usize) -> Vec<f64> {
    let (pf, pt) = (2 * from + 1, 2 * to + 1);
    let mut out = vec![0.0; 2 * pt];
    for comp in 0..2 {
        out[comp * pt..comp * pt + pf].copy_from_slice(&x[comp * pf..(comp + 1) * pf]);
    }
    out
}

/// Gauss-Newton shooting for the M3 boundary value problem on closed
/// curves. Unknowns are the Fourier coefficients of the initial tangent in
/// `(q1, q2)`. The Jacobian is a forward difference, kept up to date with
/// Broyden updates between refreshes. When a fresh Jacobian stalls the
/// basis is widened by `mode_increment` modes up to `max_modes`.
pub fn shoot_m3(c0: &DiscreteCurve, c1: &DiscreteCurve, opts: &BvpOptions) -> Result<ShootingOutcome> {
    check_same(c0, c1)?;
    require_closed(c0)?;
    let sh = Shooter::new(c0, c1, opts)?;
    let mut modes = opts.modes.min((c0.len() - 1) / 2);
    let mut x = sh.initial_guess(modes);
    let mut r = sh.residual(&x, modes).ok_or(Error::SolverFailure("initial shot left the domain".into()))?;
    let mut iterations = 0;
    let converged_at = |r: &DVector<f64>, x: &[f64], modes: usize| -> bool {
        let len = sh
            .initial_state(x, modes)
            .and_then(|s| Ok((crate::hamiltonian::discrete_energy(MetricId::M3, &s.q, &s.p)?, s.rpoint().dtheta())))
            .map(|(e, dth)| sh.t_end * dth * (2.0 * e).sqrt())
            .unwrap_or(0.0);
        r.norm() <= opts.tol * len.max(1e-12)
    };
    let mut converged = converged_at(&r, &x, modes);
    let max_modes = opts.max_modes.min((c0.len() - 1) / 2);
    let widen_basis = |x: &mut Vec<f64>, modes: &mut usize| -> bool {
        let to = (*modes + opts.mode_increment.max(1)).min(max_modes);
        if to <= *modes {
            return false;
        }
        *x = widen(x, *modes, to);
        *modes = to;
        true
    };
    // Finite-difference Jacobian, refreshed when a Broyden-updated one
    // fails to produce descent.
    let mut jac: Option<DMatrix<f64>> = None;
    let mut fresh = false;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        if jac.is_none() {
            jac = Some(sh.jacobian(&x, &r, modes)?);
            fresh = true;
        }
        let j = jac.as_mut().expect("set above");
        let svd = j.clone().svd(true, true);
        let step = svd.solve(&(-&r), 1e-12 * svd.singular_values.max()).map_err(|e| Error::SolverFailure(e.into()))?;
        let mut accepted = None;
        let mut lambda = 1.0;
        for _ in 0..12 {
            let xt: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + lambda * d).collect();
            if let Some(rt) = sh.residual(&xt, modes) {
                if rt.norm() < r.norm() * (1.0 - 1e-4 * lambda) {
                    accepted = Some((xt, rt));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xt, rt)) => {
                let slow = rt.norm() > 0.9 * r.norm();
                let ds = DVector::from_iterator(x.len(), xt.iter().zip(&x).map(|(a, b)| a - b));
                let dr = &rt - &r;
                let u = (dr - &*j * &ds) / ds.norm_squared();
                *j += u * ds.transpose();
                x = xt;
                r = rt;
                converged = converged_at(&r, &x, modes);
                if !converged && slow {
                    if fresh && !widen_basis(&mut x, &mut modes) {
                        // Keep iterating on the current basis.
                    } else {
                        jac = None;
                    }
                }
                fresh = false;
            }
            None if !fresh => jac = None,
            None => {
                if !widen_basis(&mut x, &mut modes) {
                    break;
                }
                jac = None;
            }
        }
    }
    let s0 = sh.initial_state(&x, modes)?;
    let sim = simulate(&s0, sh.t_end, sh.dt())?;
    let mismatch = sh.residual_of(&sim.states.last().expect("non-empty").q).norm();
    let mut path = rattle_path(&sim, sh.steps / (opts.samples.max(2) - 1))?;
    path.diagnostics.endpoint_mismatch = Some(mismatch);
    Ok(ShootingOutcome { path, converged, mismatch, iterations, modes })
}

/// Geodesic from `c0` at `t = 0` to `c1` at `t = opts.t_end`.
pub fn geodesic_bvp_with(id: MetricId, c0: &DiscreteCurve, c1: &DiscreteCurve, opts: &BvpOptions) -> Result<GeodesicPath> {
    check_same(c0, c1)?;
    if !(opts.t_end > 0.0) {
        return Err(Error::OutOfRange { value: opts.t_end, lo: 0.0, hi: f64::INFINITY });
    }
    let mut path = match id {
        MetricId::M1 => m1_bvp(c0, c1, opts)?,
        MetricId::M2 => m2_bvp(c0, c1, opts)?,
        MetricId::M3 => {
            let out = shoot_m3(c0, c1, opts)?;
            if !out.converged {
                return Err(Error::ShootingStall { mismatch: out.mismatch });
            }
            out.path
        }
        MetricId::M4 => return Err(Error::UnsupportedMetric("M4")),
    };
    if path.diagnostics.endpoint_mismatch.is_none() {
        let end = path.r_path.last().expect("non-empty");
        let target = r_forward(id, c1)?;
        let d: Vec<f64> = target.q.iter().zip(&end.q).map(|(a, b)| a - b).collect();
        path.diagnostics.endpoint_mismatch = Some(rpoint_inner(&target, &d, &d).sqrt());
    }
    Ok(path)
}

/// [`geodesic_bvp_with`] on `[0, 1]` with `k` time samples.
pub fn geodesic_bvp(id: MetricId, c0: &DiscreteCurve, c1: &DiscreteCurve, k: usize) -> Result<GeodesicPath> {
    geodesic_bvp_with(id, c0, c1, &BvpOptions { samples: k, ..BvpOptions::default() })
}

/// Geodesic distance with the lower bounds derived from `sqrt(length)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    pub metric: MetricId,
    pub distance: f64,
    /// `|sqrt(l1) - sqrt(l0)|`.
    pub sqrt_length_gap: f64,
    /// Lipschitz constant of `sqrt(l)` as published: 2 for M1, 4 for M2.
    pub published_factor: Option<f64>,
    /// Lipschitz constant that the fibre metric actually supports: 2.
    pub valid_factor: Option<f64>,
    /// M2 only: integrated pointwise lower bound as published.
    pub pointwise_bound_published: Option<f64>,
    /// M2 only: integrated pointwise lower bound with corrected constants.
    pub pointwise_bound_corrected: Option<f64>,
}

impl DistanceReport {
    pub fn published_bound(&self) -> Option<f64> {
        self.published_factor.map(|f| f * self.sqrt_length_gap)
    }

    pub fn valid_bound(&self) -> Option<f64> {
        self.valid_factor.map(|f| f * self.sqrt_length_gap)
    }
}

fn curve_length(c: &DiscreteCurve) -> Result<f64> {
    Ok(c.frame()?.length())
}

/// Pointwise M2 bound with the published constants: `2^{15/8} dy^2 /
/// (s0^4 + s1^4 + |dy| / 2A)^{3/2} + 16 (dsqrt s)^2` integrated in `theta`.
fn m2_published_bound(q0: &RPoint, q1: &RPoint) -> f64 {
    let a = crate::pointwise::constant_a();
    let w = q0.weights();
    let mut acc = 0.0;
    for k in 0..q0.len() {
        let (x0, y0, x1, y1) = (q0.sample(k)[0], q0.sample(k)[1], q1.sample(k)[0], q1.sample(k)[1]);
        let (s0, s1) = (x0 * x0, x1 * x1);
        let dy = y1 - y0;
        let den = (s0.powi(4) + s1.powi(4) + dy.abs() / (2.0 * a)).powf(1.5);
        acc += w[k] * (2f64.powf(15.0 / 8.0) * dy * dy / den + 16.0 * (x1 - x0).powi(2));
    }
    acc.sqrt()
}

fn m2_corrected_bound(q0: &RPoint, q1: &RPoint) -> f64 {
    let w = q0.weights();
    (0..q0.len())
        .map(|k| w[k] * crate::pointwise::dist2_lower_bound_corrected(fibre(q0, k), fibre(q1, k)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Geodesic distance between `c0` and `c1`. M1 uses the closed form, M2
/// the fibrewise distances, M3 the length of the shooting solution.
pub fn distance_with(id: MetricId, c0: &DiscreteCurve, c1: &DiscreteCurve, opts: &BvpOptions) -> Result<DistanceReport> {
    check_same(c0, c1)?;
    let gap = (curve_length(c1)?.sqrt() - curve_length(c0)?.sqrt()).abs();
    let mut rep = DistanceReport {
        metric: id,
        distance: 0.0,
        sqrt_length_gap: gap,
        published_factor: None,
        valid_factor: None,
        pointwise_bound_published: None,
        pointwise_bound_corrected: None,
    };
    match id {
        MetricId::M1 => {
            require_open(c0)?;
            let q0 = r_forward(id, c0)?;
            let q1 = r_forward(id, c1)?;
            let d: Vec<f64> = q1.q.iter().zip(&q0.q).map(|(a, b)| a - b).collect();
            rep.distance = rpoint_inner(&q0, &d, &d).sqrt();
            rep.published_factor = Some(2.0);
            rep.valid_factor = Some(2.0);
        }
        MetricId::M2 => {
            require_open(c0)?;
            let q0 = r_forward(id, c0)?;
            let q1 = r_forward(id, c1)?;
            let w = q0.weights();
            let l: Vec<f64> = (0..q0.len()).into_par_iter().map(|k| dist2(fibre(&q0, k), fibre(&q1, k))).collect::<Result<_>>()?;
            rep.distance = l.iter().zip(&w).map(|(l, w)| w * l * l).sum::<f64>().sqrt();
            rep.published_factor = Some(4.0);
            rep.valid_factor = Some(2.0);
            rep.pointwise_bound_published = Some(m2_published_bound(&q0, &q1));
            rep.pointwise_bound_corrected = Some(m2_corrected_bound(&q0, &q1));
        }
        MetricId::M3 => {
            let out = shoot_m3(c0, c1, opts)?;
            if !out.converged {
                return Err(Error::ShootingStall { mismatch: out.mismatch });
            }
            rep.distance = out.path.length();
        }
        MetricId::M4 => return Err(Error::UnsupportedMetric("M4")),
    }
    Ok(rep)
}

pub fn distance(id: MetricId, c0: &DiscreteCurve, c1: &DiscreteCurve) -> Result<DistanceReport> {
    distance_with(id, c0, c1, &BvpOptions::default())
}

/// Removes the vertical part `zeta c'` of `h` under the M3 metric, so that
/// `<L_c h, v> = 0` at every sample. The scalar field `zeta` solves the
/// dense system assembled from `L_c` on `e_j c'`, in the least-squares
/// sense when it is singular.
pub fn horizontal_project(c: &DiscreteCurve, h: &VectorField) -> Result<VectorField> {
    require_closed(c)?;
    if h.len() != c.len() {
        return Err(Error::LengthMismatch { expected: c.len(), got: h.len() });
    }
    let id = MetricId::M3;
    let n = c.len();
    let fr = c.frame()?;
    let dc: Vec<Vec2> = fr.v.iter().zip(&fr.speed).map(|(v, s)| v * *s).collect();
    let tangential = |f: &VectorField| -> Result<DVector<f64>> {
        let l = apply_l(id, c, f)?;
        Ok(DVector::from_iterator(n, l.values().iter().zip(&fr.v).map(|(l, v)| l.dot(v))))
    };
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = VectorField::zeros(n);
        e.0[j] = dc[j];
        a.set_column(j, &tangential(&e)?);
    }
    let b = tangential(h)?;
    let scale = apply_l(id, c, h)?.max_norm();
    if scale == 0.0 {
        return Ok(h.clone());
    }
    let svd = a.svd(true, true);
    let zeta = svd.solve(&b, 1e-10 * svd.singular_values.max()).map_err(|_| Error::SingularVerticalOperator)?;
    let out = VectorField(h.values().iter().zip(&dc).zip(zeta.iter()).map(|((h, d), z)| h - d * *z).collect());
    if horizontality_residual(id, c, &out)? > 1e-8 * scale {
        return Err(Error::SingularVerticalOperator);
    }
    Ok(out)
}

/// Horizontal M3 geodesic from `c0` with the horizontal part of `h`.
pub fn shape_geodesic(c0: &DiscreteCurve, h: &VectorField, t_end: f64, steps: usize) -> Result<GeodesicPath> {
    let c = center(c0)?;
    let hh = horizontal_project(&c, h)?;
    geodesic_ivp(MetricId::M3, &c, &hh, t_end, steps)
}

/// Residual of the momentum form `p_t = H_c(c_t, c_t) / 2` along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// `L2(dtheta)` norm at interior times.
    pub per_time: Vec<f64>,
    pub max: f64,
    pub mean: f64,
}

/// Evaluates the geodesic equation on a sampled path at interior times.
/// `c_t` is the path's stored velocity, `p = L_c c_t` as a density and `p_t`
/// a central difference in time. Requires uniform time samples.
pub fn geodesic_residual(id: MetricId, path: &GeodesicPath) -> Result<ResidualReport> {
    let k = path.len();
    if k < 3 {
        return Err(Error::TooFewTimeSamples { needed: 3, got: k });
    }
    require_closed(&path.curves[0])?;
    let n = path.curves[0].len();
    let dt = (path.times[k - 1] - path.times[0]) / (k - 1) as f64;
    let ct = &path.velocities;
    let p: Vec<Vec<Vec2>> = (0..k).map(|j| Ok(momentum(id, &path.curves[j], &ct[j])?.0)).collect::<Result<_>>()?;
    let w = quadrature_weights(n, true);
    let mut per_time = Vec::with_capacity(k - 2);
    for j in 1..k - 1 {
        let hc = hc_quadratic(id, &path.curves[j], &ct[j])?;
        let r: f64 = (0..n).map(|i| w[i] * ((p[j + 1][i] - p[j - 1][i]) / (2.0 * dt) - hc.0[i]).norm_squared()).sum();
        per_time.push(r.sqrt());
    }
    let max = per_time.iter().copied().fold(0.0, f64::max);
    let mean = per_time.iter().sum::<f64>() / per_time.len() as f64;
    Ok(ResidualReport { per_time, max, mean })
}

/// `\int G_c(c_t, c_t) dt` by the trapezoid rule over the stored velocities.
pub fn path_energy(path: &GeodesicPath) -> Result<f64> {
    let e: Vec<f64> = path
        .curves
        .iter()
        .zip(&path.velocities)
        .map(|(c, v)| metric_eval(path.metric, c, v, v))
        .collect::<Result<_>>()?;
    Ok(path.times.windows(2).zip(e.windows(2)).map(|(t, e)| 0.5 * (t[1] - t[0]) * (e[0] + e[1])).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn open_circle(n: usize, r: f64) -> DiscreteCurve {
        DiscreteCurve::from_fn(n, false, |t| Vec2::new(r * t.cos(), r * t.sin())).unwrap()
    }

    #[test]
    fn zero_velocity_gives_constant_path() {
        let c = open_circle(64, 1.0);
        for id in [MetricId::M1, MetricId::M2] {
            let p = geodesic_ivp(id, &c, &VectorField::zeros(64), 1.0, 4).unwrap();
            let first = &p.curves[0];
            for cc in &p.curves {
                assert!(cc.points().iter().zip(first.points()).all(|(a, b)| (a - b).norm() < 1e-12));
            }
        }
        let c = DiscreteCurve::circle(32, 1.0, Vec2::zeros());
        let p = geodesic_ivp(MetricId::M3, &c, &VectorField::zeros(32), 0.1, 10).unwrap();
        assert!(p.curves.last().unwrap().points().iter().zip(p.curves[0].points()).all(|(a, b)| (a - b).norm() < 1e-12));
        assert!(p.length() < 1e-12);
    }

    #[test]
    fn m1_circle_distance_matches_closed_form() {
        let exact = TAU * (16.0 * (4f64.powf(0.25) - 1.0).powi(2) + 4.0);
        let err = |n: usize| (distance(MetricId::M1, &open_circle(n, 1.0), &open_circle(n, 4.0)).unwrap().distance.powi(2) - exact).abs();
        let (e1, e2) = (err(256), err(512));
        assert!(e1 < 1e-3 * exact);
        assert!((e1 / e2 - 4.0).abs() < 0.2);
    }

    #[test]
    fn m1_bvp_is_a_family_of_circles() {
        let (c0, c1) = (open_circle(128, 1.0), open_circle(128, 4.0));
        let p = geodesic_bvp(MetricId::M1, &c0, &c1, 6).unwrap();
        for c in &p.curves[1..5] {
            let k = c.frame().unwrap().kappa;
            let k = &k[2..k.len() - 2];
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            assert!(k.iter().all(|x| (x - mean).abs() < 1e-3 * mean));
        }
        let d = distance(MetricId::M1, &c0, &c1).unwrap().distance;
        assert!((path_energy(&p).unwrap() - d * d).abs() < 1e-3 * d * d);
        assert!(p.diagnostics.endpoint_mismatch.unwrap() < 1e-12);
    }

    #[test]
    fn m1_shrinking_circle_exits_at_the_zero_crossing() {
        // Under u = -c both sqrt|c'| = sqrt(r) and |c'|^(1/2) kappa^(1/4) = r^(1/4)
        // decrease along the ray; the component with the larger relative rate,
        // 2 sqrt(r), reaches zero at t = 2.
        let c = open_circle(256, 1.0);
        let u = VectorField(c.points().iter().map(|p| -p).collect());
        match geodesic_ivp(MetricId::M1, &c, &u, 3.0, 30) {
            Err(Error::DomainExit { exit_time }) => assert!((exit_time - 2.0).abs() < 1e-3, "{exit_time}"),
            other => panic!("{other:?}"),
        }
        assert!(geodesic_ivp(MetricId::M1, &c, &u, 1.5, 15).is_ok());
    }

    #[test]
    fn m2_distance_is_symmetric_and_above_valid_bound() {
        let c0 = DiscreteCurve::from_fn(48, false, |t| Vec2::new(t, 0.3 * t.sin())).unwrap();
        let c1 = DiscreteCurve::from_fn(48, false, |t| Vec2::new(1.3 * t, 0.2 * (2.0 * t).cos())).unwrap();
        let a = distance(MetricId::M2, &c0, &c1).unwrap();
        let b = distance(MetricId::M2, &c1, &c0).unwrap();
        assert!((a.distance - b.distance).abs() < 1e-6 * a.distance);
        assert!(a.distance >= a.valid_bound().unwrap());
        assert!(a.distance >= a.pointwise_bound_corrected.unwrap());
    }

    #[test]
    fn m2_bvp_velocity_reproduces_endpoint() {
        let c0 = DiscreteCurve::from_fn(32, false, |t| Vec2::new(t, 0.2 * t.sin())).unwrap();
        let c1 = DiscreteCurve::from_fn(32, false, |t| Vec2::new(1.2 * t, 0.1 * (2.0 * t).sin())).unwrap();
        let p = geodesic_bvp(MetricId::M2, &c0, &c1, 5).unwrap();
        assert!(p.diagnostics.endpoint_mismatch.unwrap() < 1e-9);
        let q0 = r_forward(MetricId::M2, &c0).unwrap();
        let q1 = r_forward(MetricId::M2, &c1).unwrap();
        // Shoot every fibre with its bvp velocity and compare endpoints.
        for k in 0..q0.len() {
            let g = bvp2(fibre(&q0, k), fibre(&q1, k), 2).unwrap();
            let tr = integrate_spray2(fibre(&q0, k), g.velocities[0], 1e-3, 1000).unwrap();
            let end = tr.last().unwrap().0;
            let target = fibre(&q1, k);
            assert!((end.x - target.x).abs() + (end.y - target.y).abs() < 1e-6);
        }
    }

    #[test]
    fn rattle_path_speed_is_the_metric_speed() {
        let n = 64;
        let c = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
        let h = VectorField::from_fn(n, true, |t| Vec2::new(0.0, t.sin()));
        let p = geodesic_ivp(MetricId::M3, &c, &h, 0.2, 200).unwrap();
        let g = crate::metric::metric_eval(MetricId::M3, &c, &p.velocities[0], &p.velocities[0]).unwrap();
        assert!((p.diagnostics.speed_sq[0] - g).abs() < 1e-2 * g, "{} {g}", p.diagnostics.speed_sq[0]);
        let (a, b) = (p.diagnostics.speed_sq[0], *p.diagnostics.speed_sq.last().unwrap());
        assert!((a - b).abs() < 1e-4 * a);
        assert!(p.diagnostics.constraint_norm.iter().all(|x| *x < 1e-9));
    }

    #[test]
    fn translation_path_has_zero_residual() {
        let n = 48;
        let c = DiscreteCurve::ellipse(n, 1.5, 1.0);
        let h = VectorField::constant(n, Vec2::new(0.3, -0.2));
        let p = geodesic_ivp(MetricId::M3, &c, &h, 0.2, 20).unwrap();
        assert!(p.diagnostics.speed_sq[0] < 1e-20);
        let r = geodesic_residual(MetricId::M3, &p).unwrap();
        assert!(r.max < 1e-9);
    }

    #[test]
    fn residual_rejects_short_paths() {
        let c = DiscreteCurve::circle(16, 1.0, Vec2::zeros());
        let p = geodesic_ivp(MetricId::M3, &c, &VectorField::zeros(16), 0.1, 1).unwrap();
        assert!(matches!(geodesic_residual(MetricId::M3, &p), Err(Error::TooFewTimeSamples { .. })));
    }

    #[test]
    fn horizontal_projection_properties() {
        let n = 64;
        let c = DiscreteCurve::ellipse(n, 1.4, 1.0);
        let h = VectorField::from_fn(n, true, |t| Vec2::new((2.0 * t).cos(), 0.5 * t.sin() + 0.2));
        let k = horizontal_project(&c, &h).unwrap();
        let scale = apply_l(MetricId::M3, &c, &h).unwrap().max_norm();
        assert!(horizontality_residual(MetricId::M3, &c, &k).unwrap() < 1e-8 * scale);
        let kk = horizontal_project(&c, &k).unwrap();
        assert!(kk.sub(&k).max_norm() < 1e-8 * k.max_norm());
        // A purely vertical field has no horizontal part up to the kernel.
        let fr = c.frame().unwrap();
        let vert = VectorField(fr.v.iter().zip(&fr.speed).map(|(v, s)| v * *s).collect());
        let z = horizontal_project(&c, &vert).unwrap();
        let z = remove_kernel(MetricId::M3, &c, &z).unwrap();
        assert!(metric_eval(MetricId::M3, &c, &z, &z).unwrap() < 1e-12 * metric_eval(MetricId::M3, &c, &vert, &vert).unwrap());
    }

    #[test]
    fn circle_example_from_the_vertical_ode_is_horizontal() {
        // a = 7 cos 2t, b = 8 sin 2t solves -2a''' + 4a' - 5b'' + b = 0, so
        // h = a n + b v is horizontal on the unit circle.
        let err = |n: usize| {
            let c = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
            let fr = c.frame().unwrap();
            let th = c.thetas();
            let h = VectorField((0..n).map(|k| fr.n[k] * (7.0 * (2.0 * th[k]).cos()) + fr.v[k] * (8.0 * (2.0 * th[k]).sin())).collect());
            horizontality_residual(MetricId::M3, &c, &h).unwrap()
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 < 1.0 && (e1 / e2 - 4.0).abs() < 0.3, "{e1} {e2}");
    }

    #[test]
    fn shooting_reaches_an_ellipse() {
        let n = 32;
        let c0 = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
        let c1 = DiscreteCurve::ellipse(n, 1.3, 1.0);
        let opts = BvpOptions { t_end: 1.0, dt: 4e-3, modes: 6, mode_increment: 4, max_modes: 10, ..BvpOptions::default() };
        let out = shoot_m3(&c0, &c1, &opts).unwrap();
        assert!(out.converged, "{}", out.mismatch);
        let len = out.path.length();
        assert!(out.mismatch < 1e-4 * len);
        assert_eq!(out.path.len(), opts.samples);
        let end = out.path.curves.last().unwrap();
        // Compare with the reconstruction of the lifted target, which
        // carries the same quadrature error as the path curves.
        let target = center(&r_inverse(&lift_curve(MetricId::M3, &center(&c1).unwrap()).unwrap()).unwrap()).unwrap();
        let gap = end.points().iter().zip(target.points()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(gap < 1e-3, "{gap}");
        let d = distance_with(MetricId::M3, &c0, &c1, &opts).unwrap();
        assert!((d.distance - len).abs() < 1e-9 * len);
        assert!(d.distance > 0.1 && d.distance < PI);
    }

    #[test]
    fn m4_bvp_is_unsupported() {
        let c = DiscreteCurve::circle(16, 1.0, Vec2::zeros());
        assert!(matches!(geodesic_bvp(MetricId::M4, &c, &c, 3), Err(Error::UnsupportedMetric(_))));
    }
}
