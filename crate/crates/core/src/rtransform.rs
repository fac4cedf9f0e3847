//! R-transforms: curve <-> pointwise function maps that turn each metric into
//! an L2-type metric with fibre metric `g`, plus the image constraints and
//! the orthogonal projections onto image tangent spaces.
//!
//! | id | `q` |
//! |----|-----|
//! | M1 | `sqrt|c'| (2, 4 kappa^{1/4})` |
//! | M2 | `(sqrt|c'|, kappa |c'|^2)` |
//! | M3 | `(sqrt|c'|, alpha, kappa |c'|^2)` |
//! | M4 | `(sqrt|c'|, alpha, D_s|c'|, kappa |c'|^2)` |

use crate::curve::{check_len, d_theta, quadrature_weights, rot90, wrap_angle, CurveFrame, DiscreteCurve, Vec2, VectorField};
use crate::error::{Error, Result};
use crate::fiber::{check_pattern, g_apply, g_eval, g_inv_apply};
use crate::linalg::CyclicTridiag;
use crate::metric::{check_convex, MetricId};

/// Relative tolerance on the closedness constraint.
pub const TOL_CL: f64 = 1e-8;
/// Relative tolerance on the derivative constraint.
pub const TOL_DIFF: f64 = 1e-8;

/// Sampled point of the transformed space: `N` samples in `R^d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RPoint {
    pub metric: MetricId,
    pub closed: bool,
    pub q: Vec<f64>,
}

/// Tangent vector at an [`RPoint`], same layout as `q`.
pub type RTangent = Vec<f64>;

impl RPoint {
    pub fn new(metric: MetricId, closed: bool, q: Vec<f64>) -> Result<Self> {
        let d = metric.dim();
        if q.len() % d != 0 {
            return Err(Error::LengthMismatch { expected: d * (q.len() / d + 1), got: q.len() });
        }
        if q.len() / d < 8 {
            return Err(Error::TooFewSamples(q.len() / d));
        }
        let p = RPoint { metric, closed, q };
        p.check()?;
        Ok(p)
    }

    /// Builds an RPoint from per-sample rows.
    pub fn from_rows(metric: MetricId, closed: bool, rows: &[Vec<f64>]) -> Result<Self> {
        let d = metric.dim();
        let mut q = Vec::with_capacity(rows.len() * d);
        for r in rows {
            if r.len() != d {
                return Err(Error::LengthMismatch { expected: d, got: r.len() });
            }
            q.extend_from_slice(r);
        }
        Self::new(metric, closed, q)
    }

    pub fn check(&self) -> Result<()> {
        for k in 0..self.len() {
            check_pattern(self.metric, self.sample(k), k)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn len(&self) -> usize {
        self.q.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn sample(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.q[k * d..(k + 1) * d]
    }

    /// Component `i` (0-based) as a sample vector.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.q.iter().skip(i).step_by(self.dim()).copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.q.chunks(self.dim()).map(|c| c.to_vec()).collect()
    }

    pub fn dtheta(&self) -> f64 {
        crate::curve::grid_step(self.len(), self.closed)
    }

    pub fn weights(&self) -> Vec<f64> {
        quadrature_weights(self.len(), self.closed)
    }

    /// `q + s dq`, without a positivity check.
    pub fn offset(&self, dq: &[f64], s: f64) -> RPoint {
        RPoint { metric: self.metric, closed: self.closed, q: self.q.iter().zip(dq).map(|(a, b)| a + s * b).collect() }
    }
}

/// `G^{L2,g}_q(h, k) = sum_k w_k g_{q_k}(h_k, k_k)`.
pub fn rpoint_inner(q: &RPoint, h: &[f64], k: &[f64]) -> f64 {
    let d = q.dim();
    q.weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * g_eval(q.metric, q.sample(i), &h[i * d..(i + 1) * d], &k[i * d..(i + 1) * d]))
        .sum()
}

fn interleave(d: usize, comps: &[Vec<f64>]) -> Vec<f64> {
    let n = comps[0].len();
    let mut out = Vec::with_capacity(n * d);
    for k in 0..n {
        for c in comps {
            out.push(c[k]);
        }
    }
    out
}

fn frame_for(id: MetricId, c: &DiscreteCurve) -> Result<CurveFrame> {
    let fr = c.frame()?;
    if id == MetricId::M1 {
        check_convex(&fr)?;
    }
    Ok(fr)
}

/// `R(c)` for the chosen metric.
pub fn r_forward(id: MetricId, c: &DiscreteCurve) -> Result<RPoint> {
    let fr = frame_for(id, c)?;
    let s = &fr.speed;
    let n = fr.len();
    let sq: Vec<f64> = s.iter().map(|x| x.sqrt()).collect();
    let curv: Vec<f64> = (0..n).map(|k| fr.kappa[k] * s[k] * s[k]).collect();
    let comps = match id {
        MetricId::M1 => vec![
            sq.iter().map(|x| 2.0 * x).collect(),
            (0..n).map(|k| 4.0 * sq[k] * fr.kappa[k].powf(0.25)).collect(),
        ],
        MetricId::M2 => vec![sq, curv],
        MetricId::M3 => vec![sq, fr.alpha.clone(), curv],
        MetricId::M4 => {
            let logs: Vec<f64> = s.iter().map(|x| x.ln()).collect();
            vec![sq, fr.alpha.clone(), fr.d_theta(&logs), curv]
        }
    };
    Ok(RPoint { metric: id, closed: c.is_closed(), q: interleave(id.dim(), &comps) })
}

/// Analytic differential `dR(c).h`.
pub fn dr(id: MetricId, c: &DiscreteCurve, h: &VectorField) -> Result<RTangent> {
    let fr = frame_for(id, c)?;
    dr_frame(id, &fr, h)
}

pub fn dr_frame(id: MetricId, fr: &CurveFrame, h: &VectorField) -> Result<RTangent> {
    let j = fr.jet(h)?;
    let s = &fr.speed;
    let n = fr.len();
    let sq: Vec<f64> = s.iter().map(|x| x.sqrt()).collect();
    let half_a: Vec<f64> = (0..n).map(|k| 0.5 * j.a[k] * sq[k]).collect();
    let fs2: Vec<f64> = (0..n).map(|k| j.f[k] * s[k] * s[k]).collect();
    let comps = match id {
        MetricId::M1 => vec![
            (0..n).map(|k| j.a[k] * sq[k]).collect(),
            (0..n).map(|k| fr.kappa[k].powf(-0.75) * j.f[k] * sq[k]).collect(),
        ],
        MetricId::M2 => vec![half_a, fs2],
        MetricId::M3 => vec![half_a, j.b.clone(), fs2],
        // D(ln|c'|) varies by D(a) = |c'| (<D_s^2 h, v> + kappa <D_s h, n>).
        MetricId::M4 => vec![half_a, j.b.clone(), fr.d_theta(&j.a), fs2],
    };
    Ok(interleave(id.dim(), &comps))
}

/// Cumulative trapezoid starting at zero.
pub fn cumtrapz(f: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in f.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

fn cumtrapz_vec(f: &[Vec2], dt: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(f.len());
    let mut acc = Vec2::zeros();
    out.push(acc);
    for w in f.windows(2) {
        acc += (w[0] + w[1]) * (0.5 * dt);
        out.push(acc);
    }
    out
}

fn unit(a: f64) -> Vec2 {
    Vec2::new(a.cos(), a.sin())
}

/// Speed `|c'|` and turning-angle density `alpha' = kappa |c'|` of M1/M2 points.
fn speed_and_phi(q: &RPoint) -> (Vec<f64>, Vec<f64>) {
    let n = q.len();
    let mut speed = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    for k in 0..n {
        let x = q.sample(k);
        match q.metric {
            MetricId::M1 => {
                speed.push(0.25 * x[0] * x[0]);
                phi.push(x[1].powi(4) / (64.0 * x[0] * x[0]));
            }
            MetricId::M2 => {
                speed.push(x[0] * x[0]);
                phi.push(x[1] / (x[0] * x[0]));
            }
            _ => unreachable!("speed_and_phi is for M1/M2"),
        }
    }
    (speed, phi)
}

/// Speed and turning angle of the curve encoded by `q`. For M1/M2 the angle
/// is the cumulative trapezoid of `alpha'` starting at zero.
fn speed_and_alpha(q: &RPoint) -> (Vec<f64>, Vec<f64>) {
    match q.metric {
        MetricId::M1 | MetricId::M2 => {
            let (s, phi) = speed_and_phi(q);
            (s, cumtrapz(&phi, q.dtheta()))
        }
        MetricId::M3 | MetricId::M4 => {
            let q1 = q.component(0);
            (q1.iter().map(|x| x * x).collect(), q.component(1))
        }
    }
}

/// `R^{-1}(q)`: cumulative trapezoid of `c' = |c'| exp(i alpha)`, rooted at
/// the origin. For M1/M2 the representative also has `alpha(0) = 0`.
pub fn r_inverse(q: &RPoint) -> Result<DiscreteCurve> {
    q.check()?;
    let (s, alpha) = speed_and_alpha(q);
    let dc: Vec<Vec2> = s.iter().zip(&alpha).map(|(s, a)| unit(*a) * *s).collect();
    DiscreteCurve::new(cumtrapz_vec(&dc, q.dtheta()), q.closed)
}

/// Differential of [`r_inverse`] at `q` applied to `dq`.
pub fn dr_inverse(q: &RPoint, dq: &[f64]) -> Result<VectorField> {
    check_len(q.q.len(), dq.len())?;
    let n = q.len();
    let d = q.dim();
    let (s, alpha) = speed_and_alpha(q);
    let mut ds = vec![0.0; n];
    let dalpha: Vec<f64> = match q.metric {
        MetricId::M1 | MetricId::M2 => {
            let mut dphi = vec![0.0; n];
            for k in 0..n {
                let (x, dx) = (q.sample(k), &dq[k * d..(k + 1) * d]);
                if q.metric == MetricId::M1 {
                    ds[k] = 0.5 * x[0] * dx[0];
                    dphi[k] = (4.0 * x[1].powi(3) * dx[1] * x[0] - 2.0 * x[1].powi(4) * dx[0]) / (64.0 * x[0].powi(3));
                } else {
                    ds[k] = 2.0 * x[0] * dx[0];
                    dphi[k] = dx[1] / (x[0] * x[0]) - 2.0 * x[1] * dx[0] / x[0].powi(3);
                }
            }
            cumtrapz(&dphi, q.dtheta())
        }
        MetricId::M3 | MetricId::M4 => {
            for k in 0..n {
                ds[k] = 2.0 * q.sample(k)[0] * dq[k * d];
            }
            (0..n).map(|k| dq[k * d + 1]).collect()
        }
    };
    let ddc: Vec<Vec2> = (0..n).map(|k| unit(alpha[k]) * ds[k] + rot90(unit(alpha[k])) * (s[k] * dalpha[k])).collect();
    Ok(VectorField(cumtrapz_vec(&ddc, q.dtheta())))
}

/// Residuals of the image constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintValue {
    /// Derivative constraints (empty for M1/M2). M3: one per forward
    /// difference; M4: two per sample, interleaved.
    pub h_diff: Vec<f64>,
    /// Closedness `c(2 pi) - c(0)` of the encoded curve.
    pub h_cl: Vec2,
}

impl ConstraintValue {
    pub fn diff_max(&self) -> f64 {
        self.h_diff.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

/// Forward difference of a lifted angle, wrapping at the closed seam.
fn angle_step(q2: &[f64], k: usize) -> f64 {
    let n = q2.len();
    wrap_angle(q2[(k + 1) % n] - q2[k])
}

/// `(q1_k + q1_{k+1}) / 2`: the M3 derivative component sits between samples.
pub(crate) fn mid_q1(q1: &[f64], k: usize) -> f64 {
    0.5 * (q1[k] + q1[(k + 1) % q1.len()])
}

fn diff_rows(q: &RPoint) -> usize {
    if q.closed {
        q.len()
    } else {
        q.len() - 1
    }
}

/// Turning angle used inside the closedness constraint: left Riemann sum
/// for closed points, cumulative trapezoid for open ones.
fn cl_alpha(q: &RPoint, phi: &[f64]) -> Vec<f64> {
    let dt = q.dtheta();
    if q.closed {
        let mut out = Vec::with_capacity(phi.len());
        let mut acc = 0.0;
        for p in phi {
            out.push(acc);
            acc += p * dt;
        }
        out
    } else {
        cumtrapz(phi, dt)
    }
}

fn cl_scale(id: MetricId) -> f64 {
    if id == MetricId::M1 {
        0.25
    } else {
        1.0
    }
}

pub fn constraints(q: &RPoint) -> Result<ConstraintValue> {
    q.check()?;
    let n = q.len();
    let dt = q.dtheta();
    let w = q.weights();
    let q1 = q.component(0);
    let (alpha, scale) = match q.metric {
        MetricId::M1 | MetricId::M2 => {
            let (_, phi) = speed_and_phi(q);
            (cl_alpha(q, &phi), cl_scale(q.metric))
        }
        _ => (q.component(1), 1.0),
    };
    let mut h_cl = Vec2::zeros();
    for k in 0..n {
        h_cl += unit(alpha[k]) * (scale * w[k] * q1[k] * q1[k]);
    }
    let rows = diff_rows(q);
    let h_diff = match q.metric {
        MetricId::M1 | MetricId::M2 => Vec::new(),
        MetricId::M3 => {
            let q2 = q.component(1);
            let q3 = q.component(2);
            (0..rows).map(|k| q3[k] / mid_q1(&q1, k).powi(2) - angle_step(&q2, k) / dt).collect()
        }
        MetricId::M4 => {
            let q2 = q.component(1);
            let q3 = q.component(2);
            let q4 = q.component(3);
            let mut out = Vec::with_capacity(2 * rows);
            for k in 0..rows {
                out.push(q3[k] - 2.0 * (q1[(k + 1) % n] - q1[k]) / (q1[k] * dt));
                out.push(q4[k] / (q1[k] * q1[k]) - angle_step(&q2, k) / dt);
            }
            out
        }
    };
    Ok(ConstraintValue { h_diff, h_cl })
}

/// `G^{L2,g}`-gradients of the two components of the closedness constraint.
pub fn constraint_gradients(q: &RPoint) -> Result<[RTangent; 2]> {
    q.check()?;
    let n = q.len();
    let d = q.dim();
    let dt = q.dtheta();
    let w = q.weights();
    let q1 = q.component(0);
    // Euclidean gradient, complex-valued: real part for H^1, imaginary for H^2.
    let mut eu = vec![Vec2::zeros(); n * d];
    match q.metric {
        MetricId::M1 | MetricId::M2 => {
            let scale = cl_scale(q.metric);
            let (_, phi) = speed_and_phi(q);
            let alpha = cl_alpha(q, &phi);
            let x: Vec<Vec2> = (0..n).map(|k| unit(alpha[k]) * (w[k] * q1[k] * q1[k])).collect();
            // t[j] = sum_k C[k][j] x[k] for the cumulative-sum matrix C of cl_alpha.
            let mut tail = vec![Vec2::zeros(); n + 1];
            for k in (0..n).rev() {
                tail[k] = tail[k + 1] + x[k];
            }
            let t: Vec<Vec2> = (0..n)
                .map(|j| {
                    if q.closed {
                        tail[j + 1] * dt
                    } else {
                        let incl = if j > 0 { tail[j] } else { Vec2::zeros() };
                        (tail[j + 1] + incl) * (0.5 * dt)
                    }
                })
                .collect();
            for j in 0..n {
                let s = q.sample(j);
                let (dphi1, dphi2) = if q.metric == MetricId::M1 {
                    (-2.0 * s[1].powi(4) / (64.0 * s[0].powi(3)), 4.0 * s[1].powi(3) / (64.0 * s[0] * s[0]))
                } else {
                    (-2.0 * s[1] / s[0].powi(3), 1.0 / (s[0] * s[0]))
                };
                let it = rot90(t[j]);
                eu[j * d] = (unit(alpha[j]) * (2.0 * w[j] * s[0]) + it * dphi1) * scale;
                eu[j * d + 1] = it * (dphi2 * scale);
            }
        }
        MetricId::M3 | MetricId::M4 => {
            for j in 0..n {
                let s = q.sample(j);
                let e = unit(s[1]);
                eu[j * d] = e * (2.0 * w[j] * s[0]);
                eu[j * d + 1] = rot90(e) * (w[j] * s[0] * s[0]);
            }
        }
    }
    let mut out = [vec![0.0; n * d], vec![0.0; n * d]];
    let mut tmp = [0.0; 4];
    for (comp, g) in out.iter_mut().enumerate() {
        for j in 0..n {
            let row: Vec<f64> = (0..d).map(|i| if comp == 0 { eu[j * d + i].x } else { eu[j * d + i].y } / w[j]).collect();
            g_inv_apply(q.metric, q.sample(j), &row, &mut tmp[..d]);
            g[j * d..(j + 1) * d].copy_from_slice(&tmp[..d]);
        }
    }
    Ok(out)
}

/// Checks that `q` satisfies its constraints to the working tolerances.
pub fn check_on_image(q: &RPoint) -> Result<ConstraintValue> {
    let cv = constraints(q)?;
    if q.closed {
        let q1 = q.component(0);
        let mass: f64 = q1.iter().map(|x| x * x).sum::<f64>() * q.dtheta();
        let tol = TOL_CL * mass;
        if cv.h_cl.norm() > tol {
            return Err(Error::OffImage { residual: cv.h_cl.norm(), tolerance: tol });
        }
    }
    if !cv.h_diff.is_empty() {
        let scale = 1.0 + (0..q.len()).map(|k| (q.sample(k)[2] / q.sample(k)[0].powi(2)).abs()).fold(0.0, f64::max);
        let tol = TOL_DIFF * scale;
        if cv.diff_max() > tol {
            return Err(Error::OffImage { residual: cv.diff_max(), tolerance: tol });
        }
    }
    Ok(cv)
}

fn gram_schmidt_remove(q: &RPoint, h: &[f64], dirs: &[RTangent]) -> Result<RTangent> {
    let mut basis: Vec<RTangent> = Vec::new();
    for v in dirs {
        let mut u = v.clone();
        for b in &basis {
            let c = rpoint_inner(q, &u, b);
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let nrm = rpoint_inner(q, &u, &u).sqrt();
        if !(nrm > 1e-300) {
            return Err(Error::RankDeficiency);
        }
        u.iter_mut().for_each(|x| *x /= nrm);
        basis.push(u);
    }
    let mut out = h.to_vec();
    for b in &basis {
        let c = rpoint_inner(q, &out, b);
        out.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    Ok(out)
}

/// Projection onto the tangent space of the derivative constraint of a
/// closed M3 point (no closedness condition): `k = h - g^-1 D^T mu` with
/// `D g^-1 D^T mu = D h`, a cyclic tridiagonal system since row `i` of `D`
/// only touches samples `i` and `i + 1`.
pub fn project_derivative_m3(q: &RPoint, h: &[f64]) -> Result<RTangent> {
    if q.metric != MetricId::M3 {
        return Err(Error::UnsupportedMetric(q.metric.name()));
    }
    if !q.closed {
        return Err(Error::OpenCurveUnsupported);
    }
    check_len(q.q.len(), h.len())?;
    q.check()?;
    let n = q.len();
    let dt = q.dtheta();
    let q1 = q.component(0);
    // Row i: c1[i] (k1_i + k1_j) + (k2_i - k2_j) / dt + c3[i] k3_i, j = i + 1.
    let c1: Vec<f64> = (0..n).map(|i| -q.q[3 * i + 2] / mid_q1(&q1, i).powi(3)).collect();
    let c3: Vec<f64> = (0..n).map(|i| 1.0 / mid_q1(&q1, i).powi(2)).collect();
    let (g1, g2, g3) = (0.25, |k: usize| q1[k].powi(-2), |k: usize| q1[k].powi(6));
    let mut m = CyclicTridiag::new(n);
    for i in 0..n {
        let j = (i + 1) % n;
        m.diag[i] = 2.0 * c1[i] * c1[i] * g1 + (g2(i) + g2(j)) / (dt * dt) + c3[i] * c3[i] * g3(i);
        m.upper[i] = c1[i] * c1[j] * g1 - g2(j) / (dt * dt);
        m.lower[j] = m.upper[i];
    }
    let rhs = diff_jacobian_apply(q, h);
    let mu = m.solve(&rhs).map_err(|_| Error::SolverFailure("derivative projection".into()))?;
    let mut out = h.to_vec();
    for i in 0..n {
        let j = (i + 1) % n;
        out[3 * i] -= g1 * c1[i] * mu[i];
        out[3 * j] -= g1 * c1[i] * mu[i];
        out[3 * i + 1] -= g2(i) * mu[i] / dt;
        out[3 * j + 1] += g2(j) * mu[i] / dt;
        out[3 * i + 2] -= g3(i) * c3[i] * mu[i];
    }
    Ok(out)
}

/// `G^{L2,g}`-orthogonal projection onto the tangent space of the image.
pub fn project_image(q: &RPoint, h: &[f64]) -> Result<RTangent> {
    check_len(q.q.len(), h.len())?;
    match q.metric {
        MetricId::M1 | MetricId::M2 => {
            if !q.closed {
                // Open curves: the transform is onto an open set, nothing to remove.
                q.check()?;
                return Ok(h.to_vec());
            }
            check_on_image(q)?;
            let grads = constraint_gradients(q)?;
            gram_schmidt_remove(q, h, &grads)
        }
        MetricId::M3 => {
            if !q.closed {
                return Err(Error::OpenCurveUnsupported);
            }
            check_on_image(q)?;
            let grads = constraint_gradients(q)?;
            let v1 = project_derivative_m3(q, &grads[0])?;
            let v2 = project_derivative_m3(q, &grads[1])?;
            let k = project_derivative_m3(q, h)?;
            gram_schmidt_remove(q, &k, &[v1, v2])
        }
        MetricId::M4 => Err(Error::UnsupportedMetric("M4")),
    }
}

/// Linearised derivative constraint `DH_diff(q) k` (M3/M4).
pub fn diff_jacobian_apply(q: &RPoint, k: &[f64]) -> Vec<f64> {
    let n = q.len();
    let dt = q.dtheta();
    let rows = diff_rows(q);
    match q.metric {
        MetricId::M3 => (0..rows)
            .map(|i| {
                let j = (i + 1) % n;
                let (m, q3) = (0.5 * (q.q[3 * i] + q.q[3 * j]), q.q[3 * i + 2]);
                let k1 = 0.5 * (k[3 * i] + k[3 * j]);
                k[3 * i + 2] / (m * m) - 2.0 * q3 * k1 / m.powi(3) - (k[3 * j + 1] - k[3 * i + 1]) / dt
            })
            .collect(),
        MetricId::M4 => {
            let mut out = Vec::with_capacity(2 * rows);
            for i in 0..rows {
                let j = (i + 1) % n;
                let (q1, q1n, q4) = (q.q[4 * i], q.q[4 * j], q.q[4 * i + 3]);
                out.push(k[4 * i + 2] - 2.0 * (k[4 * j] / q1 - q1n * k[4 * i] / (q1 * q1)) / dt);
                out.push(k[4 * i + 3] / (q1 * q1) - 2.0 * q4 * k[4 * i] / q1.powi(3) - (k[4 * j + 1] - k[4 * i + 1]) / dt);
            }
            out
        }
        _ => Vec::new(),
    }
}

/// Lowers a tangent to a covector (`g_q h` per sample, without weights).
pub fn lower(q: &RPoint, h: &[f64]) -> Vec<f64> {
    let d = q.dim();
    let mut out = vec![0.0; h.len()];
    for k in 0..q.len() {
        g_apply(q.metric, q.sample(k), &h[k * d..(k + 1) * d], &mut out[k * d..(k + 1) * d]);
    }
    out
}

/// Derivative of sampled data with the curve stencils (used in tests and
/// for building tangent fields).
pub fn sample_derivative(f: &[f64], closed: bool) -> Vec<f64> {
    d_theta(f, closed, crate::curve::grid_step(f.len(), closed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::metric_eval;
    use std::f64::consts::{PI, TAU};

    fn blob(n: usize) -> DiscreteCurve {
        DiscreteCurve::from_fn(n, true, |t| {
            let r = 1.0 + 0.08 * (2.0 * t).cos() + 0.03 * (3.0 * t + 0.5).sin();
            Vec2::new(1.3 * r * t.cos(), r * t.sin())
        })
        .unwrap()
    }

    fn field(n: usize, closed: bool) -> VectorField {
        VectorField::from_fn(n, closed, |t| Vec2::new(0.4 * (2.0 * t).sin() + 0.1 * t.cos(), 0.3 * (t + 0.2).cos() - 0.2 * (3.0 * t).sin()))
    }

    #[test]
    fn circle_values() {
        let c = DiscreteCurve::circle(64, 1.0, Vec2::zeros());
        let dt = c.dtheta();
        let s = dt.sin() / dt;
        let q = r_forward(MetricId::M1, &c).unwrap();
        for k in 0..64 {
            let x = q.sample(k);
            assert!((x[0] - 2.0 * s.sqrt()).abs() < 1e-12 && (x[1] - 4.0 * s.powf(0.25)).abs() < 1e-12);
        }
        let r = 3.0;
        let q = r_forward(MetricId::M2, &DiscreteCurve::circle(64, r, Vec2::zeros())).unwrap();
        for k in 0..64 {
            let x = q.sample(k);
            assert!((x[0] - (r * s).sqrt()).abs() < 1e-12 && (x[1] - r * s).abs() < 1e-12);
        }
        let q = r_forward(MetricId::M3, &c).unwrap();
        let th = c.thetas();
        for k in 0..64 {
            let x = q.sample(k);
            assert!((x[1] - th[k] - PI / 2.0).abs() < 1e-12 && (x[2] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn m2_line() {
        let q = RPoint::from_rows(MetricId::M2, false, &vec![vec![1.0, 0.0]; 33]).unwrap();
        let c = r_inverse(&q).unwrap();
        for (p, t) in c.points().iter().zip(c.thetas()) {
            assert!((p - Vec2::new(t, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn m1_unit_circle_from_constant() {
        let q = RPoint::from_rows(MetricId::M1, true, &vec![vec![2.0, 4.0]; 256]).unwrap();
        let c = r_inverse(&q).unwrap();
        for (p, t) in c.points().iter().zip(c.thetas()) {
            assert!((p - Vec2::new(t.sin(), 1.0 - t.cos())).norm() < 1e-3);
        }
    }

    #[test]
    fn m3_constraints_on_circle() {
        let n = 50;
        let rows: Vec<Vec<f64>> = (0..n).map(|k| vec![1.0, TAU * k as f64 / n as f64 + PI / 2.0, 1.0]).collect();
        let q = RPoint::from_rows(MetricId::M3, true, &rows).unwrap();
        let cv = constraints(&q).unwrap();
        assert!(cv.diff_max() < 1e-12 && cv.h_cl.norm() < 1e-14);
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], r[1], 1.1]).collect();
        let cv = constraints(&RPoint::from_rows(MetricId::M3, true, &rows).unwrap()).unwrap();
        assert!(cv.h_diff.iter().all(|x| (x - 0.1).abs() < 1e-12));
        let g = constraint_gradients(&q).unwrap();
        for k in 0..n {
            let a = rows[k][1];
            assert!((g[0][3 * k] - 0.5 * a.cos()).abs() < 1e-12);
            assert!((g[0][3 * k + 1] + a.sin()).abs() < 1e-12);
            assert_eq!(g[0][3 * k + 2], 0.0);
        }
    }

    #[test]
    fn m1_open_gap_matches_inverse() {
        let c = DiscreteCurve::from_fn(80, false, |t| {
            let u = 0.4 * t;
            Vec2::new(u.cos(), 0.6 * u.sin())
        })
        .unwrap();
        let q = r_forward(MetricId::M1, &c).unwrap();
        let cv = constraints(&q).unwrap();
        let rc = r_inverse(&q).unwrap();
        let gap = rc.points()[79] - rc.points()[0];
        assert!((cv.h_cl.norm() - gap.norm()).abs() < 1e-12);
    }

    #[test]
    fn m2_gradient_tail_is_empty_at_end() {
        let q = r_forward(MetricId::M2, &blob(64)).unwrap();
        let g = constraint_gradients(&q).unwrap();
        let x = q.sample(63);
        let alpha_last: f64 = {
            let phi: Vec<f64> = (0..64).map(|k| q.sample(k)[1] / q.sample(k)[0].powi(2)).collect();
            phi[..63].iter().sum::<f64>() * q.dtheta()
        };
        assert!((g[0][2 * 63] - 0.5 * x[0] * alpha_last.cos()).abs() < 1e-12);
        assert!(g[0][2 * 63 + 1].abs() < 1e-14);
    }

    #[test]
    fn gradients_match_fd() {
        for id in [MetricId::M1, MetricId::M2, MetricId::M3, MetricId::M4] {
            for closed in [true, false] {
                let c = if closed {
                    blob(48)
                } else {
                    DiscreteCurve::from_fn(48, false, |t| Vec2::new((0.5 * t).cos(), 0.7 * (0.5 * t).sin())).unwrap()
                };
                let q = r_forward(id, &c).unwrap();
                let grads = constraint_gradients(&q).unwrap();
                let dq: Vec<f64> = (0..q.q.len()).map(|i| ((i * 7 % 13) as f64 / 13.0 - 0.5) * 0.3).collect();
                let eps = 1e-6;
                let hp = constraints(&q.offset(&dq, eps)).unwrap().h_cl;
                let hm = constraints(&q.offset(&dq, -eps)).unwrap().h_cl;
                let fd = (hp - hm) / (2.0 * eps);
                let an = Vec2::new(rpoint_inner(&q, &grads[0], &dq), rpoint_inner(&q, &grads[1], &dq));
                assert!((fd - an).norm() < 1e-5 * fd.norm().max(1e-3), "{id} closed={closed}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn isometry_and_fd_differential() {
        let n = 128;
        let c = blob(n);
        let h = field(n, true);
        for id in MetricId::ALL {
            let q = r_forward(id, &c).unwrap();
            let d = dr(id, &c, &h).unwrap();
            let g = metric_eval(id, &c, &h, &h).unwrap();
            assert!((g - rpoint_inner(&q, &d, &d)).abs() < 1e-10 * g, "{id}");
            let eps = 1e-5;
            let qp = r_forward(id, &c.perturbed(&h, eps).unwrap()).unwrap();
            let qm = r_forward(id, &c.perturbed(&h, -eps).unwrap()).unwrap();
            let dim = id.dim();
            for i in 0..q.q.len() {
                let mut diff = qp.q[i] - qm.q[i];
                if dim >= 3 && i % dim == 1 {
                    diff = wrap_angle(diff);
                }
                let fd = diff / (2.0 * eps);
                assert!((fd - d[i]).abs() < 1e-6 * (1.0 + d[i].abs()), "{id} {i}: {fd} vs {}", d[i]);
            }
        }
    }

    #[test]
    fn dr_inverse_matches_fd() {
        let c = blob(64);
        for id in MetricId::ALL {
            let q = r_forward(id, &c).unwrap();
            let dq: Vec<f64> = (0..q.q.len()).map(|i| ((i * 5 % 11) as f64 / 11.0 - 0.5) * 0.2).collect();
            let an = dr_inverse(&q, &dq).unwrap();
            let eps = 1e-6;
            let cp = r_inverse(&q.offset(&dq, eps)).unwrap();
            let cm = r_inverse(&q.offset(&dq, -eps)).unwrap();
            for k in 0..64 {
                let fd = (cp.points()[k] - cm.points()[k]) / (2.0 * eps);
                assert!((fd - an.values()[k]).norm() < 1e-6, "{id}");
            }
        }
    }

    fn m3_on_image(n: usize) -> RPoint {
        // Circle, exactly on the discrete image.
        let rows: Vec<Vec<f64>> = (0..n).map(|k| vec![1.0, TAU * k as f64 / n as f64 + PI / 2.0, 1.0]).collect();
        RPoint::from_rows(MetricId::M3, true, &rows).unwrap()
    }

    fn random_tangent(len: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Lifted blob: exact image point with non-constant `q1`.
    fn m3_blob_on_image(n: usize) -> RPoint {
        let mut q = r_forward(MetricId::M3, &blob(n)).unwrap();
        let q1 = q.component(0);
        let q2 = q.component(1);
        for k in 0..n {
            q.q[3 * k + 2] = mid_q1(&q1, k).powi(2) * angle_step(&q2, k) / q.dtheta();
        }
        q
    }

    #[test]
    fn m3_projection_properties() {
        for q in [m3_on_image(64), m3_blob_on_image(64)] {
            check_projection(&q);
        }
    }

    fn check_projection(q: &RPoint) {
        let q = q.clone();
        check_on_image(&q).unwrap();
        let h = random_tangent(q.q.len(), 1);
        let k = project_image(&q, &h).unwrap();
        assert!(diff_jacobian_apply(&q, &k).iter().all(|x| x.abs() < 1e-9));
        let grads = constraint_gradients(&q).unwrap();
        for g in &grads {
            assert!(rpoint_inner(&q, g, &k).abs() < 1e-9);
        }
        let resid: Vec<f64> = h.iter().zip(&k).map(|(a, b)| a - b).collect();
        for s in 0..50 {
            let t = project_image(&q, &random_tangent(q.q.len(), 100 + s)).unwrap();
            assert!(rpoint_inner(&q, &resid, &t).abs() < 1e-9);
        }
        let kk = project_image(&q, &k).unwrap();
        assert!(kk.iter().zip(&k).all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn m2_projection_kills_gradient() {
        // Constant samples close exactly (roots of unity).
        let q = RPoint::from_rows(MetricId::M2, true, &vec![vec![1.3, 1.69]; 64]).unwrap();
        let g = constraint_gradients(&q).unwrap();
        let k = project_image(&q, &g[0]).unwrap();
        assert!(rpoint_inner(&q, &k, &k).sqrt() < 1e-10 * rpoint_inner(&q, &g[0], &g[0]).sqrt());
    }

    #[test]
    fn sampled_closed_curve_is_near_image() {
        let q = r_forward(MetricId::M2, &blob(64)).unwrap();
        let r = constraints(&q).unwrap().h_cl.norm();
        assert!(r > 1e-8 && r < 1e-2);
        assert!(matches!(project_image(&q, &vec![0.0; 128]), Err(Error::OffImage { .. })));
    }

    #[test]
    fn projection_rejects_off_image() {
        let rows: Vec<Vec<f64>> = (0..32).map(|k| vec![1.0, 0.01 * k as f64, 0.01 * 32.0 / TAU]).collect();
        let q = RPoint::from_rows(MetricId::M3, true, &rows).unwrap();
        assert!(matches!(project_image(&q, &vec![0.0; 96]), Err(Error::OffImage { .. })));
    }
}
