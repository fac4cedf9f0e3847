//! Spatially discrete Hamiltonian system on the closed-curve image of the
//! M3 (or M4) transform and its RATTLE time stepper.
//!
//! Unknowns are `q, p` with `N x d` entries, `E = 1/2 sum_k g^-1_k(p_k, p_k) dtheta`
//! and position constraints `H(q) = (H_diff, Re H_cl, Im H_cl) = 0`. Velocities
//! are `dq/dt = dE/dp = g^-1 p dtheta`.
//!
//! For M3 the derivative component `q3_k` is a forward difference and lives
//! between samples `k` and `k + 1`, so both its constraint and its metric
//! weight use the edge value `(q1_k + q1_{k+1}) / 2`:
//! `g_k = diag(4, q1_k^2, mid_k^-6)`. M4 uses the pointwise fibre metric.
//!
//! One step of size `dt`:
//!
//! ```text
//! p* = p - dt/2 (dE/dq(q, p*) + DH(q)^T l1)
//! q' = q + dt/2 (dE/dp(q, p*) + dE/dp(q', p*)),   H(q') = 0
//! p' = p* - dt/2 (dE/dq(q', p*) + DH(q')^T l2),   DH(q') dE/dp(q', p') = 0
//! ```
//!
//! For these metrics both implicit relations are triangular, so `p*` and `q'`
//! are explicit functions of `l1` and Newton runs on `l1` alone. Its Jacobian
//! is approximated by `DH(q') diag(M_k) DH(q)^T` with the per-sample blocks
//! `M_k = dq'_k / d(DH^T l1)_k`: cyclic tridiagonal plus a two-row border for
//! M3 (dense for M4). For M4 the blocks are exact; for M3 the neglected
//! coupling through `mid_k` is `O(dt^3)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fiber::{check_pattern, g_inv_apply, g_inv_apply_dq, g_inv_grad};
use crate::linalg::{BorderedFactor, BorderedSystem, CyclicTridiag};
use crate::metric::MetricId;
use crate::rtransform::{constraints, RPoint};

type Mat4 = [[f64; 4]; 4];

fn check_supported(id: MetricId) -> Result<()> {
    match id {
        MetricId::M3 => Ok(()),
        MetricId::M4 if cfg!(feature = "m4") => Ok(()),
        MetricId::M4 => Err(Error::UnsupportedMetric("M4 (build with the m4 feature)")),
        _ => Err(Error::UnsupportedMetric(id.name())),
    }
}

/// Phase-space point of the discrete system.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianState {
    pub metric: MetricId,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub t: f64,
}

impl HamiltonianState {
    pub fn new(metric: MetricId, q: Vec<f64>, p: Vec<f64>) -> Result<Self> {
        check_supported(metric)?;
        if q.len() != p.len() {
            return Err(Error::LengthMismatch { expected: q.len(), got: p.len() });
        }
        RPoint::new(metric, true, q.clone())?;
        Ok(HamiltonianState { metric, q, p, t: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.q.len() / self.metric.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn dtheta(&self) -> f64 {
        std::f64::consts::TAU / self.len() as f64
    }

    pub fn rpoint(&self) -> RPoint {
        RPoint { metric: self.metric, closed: true, q: self.q.clone() }
    }
}

fn dtheta_of(id: MetricId, q: &[f64]) -> f64 {
    std::f64::consts::TAU / (q.len() / id.dim()) as f64
}

fn check_all(id: MetricId, q: &[f64]) -> Result<()> {
    let d = id.dim();
    for k in 0..q.len() / d {
        check_pattern(id, &q[k * d..(k + 1) * d], k)?;
    }
    Ok(())
}

fn mid(q: &[f64], k: usize) -> f64 {
    let n = q.len() / 3;
    0.5 * (q[3 * k] + q[3 * ((k + 1) % n)])
}

/// Diagonal of `g_k^-1` for M3.
fn m3_inv_diag(q: &[f64], k: usize) -> [f64; 3] {
    [0.25, q[3 * k].powi(-2), mid(q, k).powi(6)]
}

/// `g_k^-1 v_k` at every sample.
fn inv_mass_apply(id: MetricId, q: &[f64], v: &[f64]) -> Vec<f64> {
    let d = id.dim();
    let mut out = vec![0.0; q.len()];
    for k in 0..q.len() / d {
        if id == MetricId::M3 {
            let m = m3_inv_diag(q, k);
            for i in 0..3 {
                out[3 * k + i] = m[i] * v[3 * k + i];
            }
        } else {
            g_inv_apply(id, &q[k * d..(k + 1) * d], &v[k * d..(k + 1) * d], &mut out[k * d..(k + 1) * d]);
        }
    }
    out
}

/// `E(q, p) = 1/2 sum g^-1(p, p) dtheta`.
pub fn discrete_energy(id: MetricId, q: &[f64], p: &[f64]) -> Result<f64> {
    check_all(id, q)?;
    let v = inv_mass_apply(id, q, p);
    Ok(0.5 * v.iter().zip(p).map(|(a, b)| a * b).sum::<f64>() * dtheta_of(id, q))
}

/// `dE/dq`.
pub fn energy_grad_q(id: MetricId, q: &[f64], p: &[f64]) -> Vec<f64> {
    let d = id.dim();
    let n = q.len() / d;
    let dth = dtheta_of(id, q);
    let mut out = vec![0.0; q.len()];
    if id == MetricId::M3 {
        for k in 0..n {
            let w = 3.0 * mid(q, k).powi(5) * p[3 * k + 2].powi(2);
            out[3 * k] += -2.0 * q[3 * k].powi(-3) * p[3 * k + 1].powi(2) + w;
            out[3 * ((k + 1) % n)] += w;
        }
    } else {
        for k in 0..n {
            g_inv_grad(id, &q[k * d..(k + 1) * d], &p[k * d..(k + 1) * d], &mut out[k * d..(k + 1) * d]);
        }
    }
    out.iter_mut().for_each(|x| *x *= 0.5 * dth);
    out
}

/// `dE/dp = g^-1 p dtheta`.
pub fn energy_grad_p(id: MetricId, q: &[f64], p: &[f64]) -> Vec<f64> {
    let dth = dtheta_of(id, q);
    let mut out = inv_mass_apply(id, q, p);
    out.iter_mut().for_each(|x| *x *= dth);
    out
}

/// Constraint values: derivative rows followed by `Re H_cl`, `Im H_cl`.
pub fn constraint_values(id: MetricId, q: &[f64]) -> Result<Vec<f64>> {
    let cv = constraints(&RPoint { metric: id, closed: true, q: q.to_vec() })?;
    let mut out = cv.h_diff;
    out.push(cv.h_cl.x);
    out.push(cv.h_cl.y);
    Ok(out)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Sparse constraint Jacobian: derivative rows as (flat index, value) lists,
/// closedness rows dense.
#[derive(Debug, Clone)]
pub struct ConstraintJacobian {
    pub dim: usize,
    pub diff: Vec<Vec<(usize, f64)>>,
    pub cl: [Vec<f64>; 2],
}

impl ConstraintJacobian {
    pub fn rows(&self) -> usize {
        self.diff.len() + 2
    }

    pub fn cols(&self) -> usize {
        self.cl[0].len()
    }

    pub fn apply(&self, k: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.diff.iter().map(|r| r.iter().map(|(i, v)| v * k[*i]).sum()).collect();
        for c in &self.cl {
            out.push(c.iter().zip(k).map(|(a, b)| a * b).sum());
        }
        out
    }

    pub fn apply_t(&self, lam: &[f64]) -> Vec<f64> {
        let m = self.diff.len();
        let mut out: Vec<f64> = self.cl[0].iter().zip(&self.cl[1]).map(|(a, b)| a * lam[m] + b * lam[m + 1]).collect();
        for (row, l) in self.diff.iter().zip(lam) {
            for (i, v) in row {
                out[*i] += v * l;
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols());
        for (r, row) in self.diff.iter().enumerate() {
            for (i, v) in row {
                m[(r, *i)] += v;
            }
        }
        for (c, row) in self.cl.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                m[(self.diff.len() + c, i)] = *v;
            }
        }
        m
    }
}

/// Analytic `DH(q)` for closed M3/M4 points.
pub fn constraint_jacobian(id: MetricId, q: &[f64]) -> Result<ConstraintJacobian> {
    check_supported(id)?;
    check_all(id, q)?;
    let d = id.dim();
    let n = q.len() / d;
    let dth = dtheta_of(id, q);
    let mut diff = Vec::with_capacity(n * (d - 2));
    let mut cl = [vec![0.0; q.len()], vec![0.0; q.len()]];
    for i in 0..n {
        let j = (i + 1) % n;
        let s = &q[i * d..(i + 1) * d];
        let q1 = s[0];
        if id == MetricId::M3 {
            let m = mid(q, i);
            let c1 = -s[2] / m.powi(3);
            diff.push(vec![(3 * i, c1), (3 * j, c1), (3 * i + 1, 1.0 / dth), (3 * i + 2, 1.0 / (m * m)), (3 * j + 1, -1.0 / dth)]);
        } else {
            let q1n = q[j * d];
            diff.push(vec![(4 * i, 2.0 * q1n / (q1 * q1 * dth)), (4 * j, -2.0 / (q1 * dth)), (4 * i + 2, 1.0)]);
            diff.push(vec![(4 * i, -2.0 * s[3] / q1.powi(3)), (4 * i + 1, 1.0 / dth), (4 * i + 3, 1.0 / (q1 * q1)), (4 * j + 1, -1.0 / dth)]);
        }
        let (c, sn) = (s[1].cos(), s[1].sin());
        cl[0][i * d] = 2.0 * q1 * c * dth;
        cl[1][i * d] = 2.0 * q1 * sn * dth;
        cl[0][i * d + 1] = -q1 * q1 * sn * dth;
        cl[1][i * d + 1] = q1 * q1 * c * dth;
    }
    Ok(ConstraintJacobian { dim: d, diff, cl })
}

/// Factorised `L diag(M_k) R^T`.
enum NormalFactor {
    Bordered(BorderedFactor, usize),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl NormalFactor {
    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            NormalFactor::Bordered(f, m) => {
                let (mut x, y) = f.solve(&rhs[..*m], &rhs[*m..])?;
                x.extend(y);
                Ok(x)
            }
            NormalFactor::Dense(lu) => {
                let v = lu.solve(&nalgebra::DVector::from_column_slice(rhs)).ok_or(Error::SingularSystem)?;
                Ok(v.iter().copied().collect())
            }
        }
    }
}

fn assemble(left: &ConstraintJacobian, blocks: &[Mat4], right: &ConstraintJacobian) -> Result<NormalFactor> {
    let d = left.dim;
    let m = left.diff.len();
    let nd = left.cols();
    let mult = |row: &[(usize, f64)]| -> Vec<(usize, f64)> {
        let mut u = Vec::with_capacity(row.len() * d);
        for &(idx, v) in row {
            let (s, a) = (idx / d, idx % d);
            for b in 0..d {
                let x = v * blocks[s][a][b];
                if x != 0.0 {
                    u.push((s * d + b, x));
                }
            }
        }
        u
    };
    let mut col_index: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nd];
    for (c, row) in right.diff.iter().enumerate() {
        for &(idx, v) in row {
            col_index[idx].push((c, v));
        }
    }
    let lm: Vec<Vec<f64>> = left
        .cl
        .iter()
        .map(|row| {
            let mut out = vec![0.0; nd];
            for s in 0..nd / d {
                for a in 0..d {
                    let x = row[s * d + a];
                    if x != 0.0 {
                        for b in 0..d {
                            out[s * d + b] += x * blocks[s][a][b];
                        }
                    }
                }
            }
            out
        })
        .collect();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    let mut b_cols = vec![vec![0.0; m]; 2];
    for (r, row) in left.diff.iter().enumerate() {
        let u = mult(row);
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for &(idx, x) in &u {
            for &(c, v) in &col_index[idx] {
                match acc.iter_mut().find(|e| e.0 == c) {
                    Some(e) => e.1 += x * v,
                    None => acc.push((c, x * v)),
                }
            }
            for k in 0..2 {
                b_cols[k][r] += x * right.cl[k][idx];
            }
        }
        entries.push(acc);
    }
    let c_rows: Vec<Vec<f64>> = lm.iter().map(|l| right.diff.iter().map(|row| row.iter().map(|(i, v)| l[*i] * v).sum()).collect()).collect();
    let dmat = DMatrix::from_fn(2, 2, |i, j| lm[i].iter().zip(&right.cl[j]).map(|(a, b)| a * b).sum());

    let tridiag = m >= 3 && entries.iter().enumerate().all(|(r, e)| e.iter().all(|(c, _)| *c == r || *c == (r + 1) % m || *c == (r + m - 1) % m));
    if tridiag {
        let mut a = CyclicTridiag::new(m);
        for (r, e) in entries.iter().enumerate() {
            for &(c, v) in e {
                if c == r {
                    a.diag[r] += v;
                } else if c == (r + 1) % m {
                    a.upper[r] += v;
                } else {
                    a.lower[r] += v;
                }
            }
        }
        let f = BorderedSystem { a, b_cols: b_cols.iter().map(|c| c.to_vec()).collect(), c_rows, d: dmat }.factor()?;
        Ok(NormalFactor::Bordered(f, m))
    } else {
        let mut full = DMatrix::zeros(m + 2, m + 2);
        for (r, e) in entries.iter().enumerate() {
            for &(c, v) in e {
                full[(r, c)] += v;
            }
            full[(r, m)] = b_cols[0][r];
            full[(r, m + 1)] = b_cols[1][r];
        }
        for k in 0..2 {
            for c in 0..m {
                full[(m + k, c)] = c_rows[k][c];
            }
            full[(m + k, m)] = dmat[(k, 0)];
            full[(m + k, m + 1)] = dmat[(k, 1)];
        }
        let lu = full.lu();
        if lu.determinant() == 0.0 {
            return Err(Error::SingularSystem);
        }
        Ok(NormalFactor::Dense(lu))
    }
}

fn g_inv_blocks(id: MetricId, q: &[f64]) -> Vec<Mat4> {
    let d = id.dim();
    (0..q.len() / d)
        .map(|k| {
            if id == MetricId::M3 {
                let m = m3_inv_diag(q, k);
                let mut b = [[0.0; 4]; 4];
                (0..3).for_each(|i| b[i][i] = m[i]);
                b
            } else {
                g_inv_mat(id, &q[k * d..(k + 1) * d])
            }
        })
        .collect()
}

fn g_inv_mat(id: MetricId, q: &[f64]) -> Mat4 {
    let d = id.dim();
    let mut m = [[0.0; 4]; 4];
    let mut e = [0.0; 4];
    let mut col = [0.0; 4];
    for j in 0..d {
        e[..d].iter_mut().for_each(|x| *x = 0.0);
        e[j] = 1.0;
        g_inv_apply(id, q, &e[..d], &mut col[..d]);
        for i in 0..d {
            m[i][j] = col[i];
        }
    }
    m
}

fn mat_mul(a: &Mat4, b: &Mat4, d: usize) -> Mat4 {
    let mut c = [[0.0; 4]; 4];
    for i in 0..d {
        for k in 0..d {
            if a[i][k] != 0.0 {
                for j in 0..d {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
    }
    c
}

/// `(I - A)^-1` for nilpotent `A` (the fibre Jacobians here all are).
fn neumann(a: &Mat4, d: usize) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    let mut pw = [[0.0; 4]; 4];
    for i in 0..d {
        out[i][i] = 1.0;
        pw[i][i] = 1.0;
    }
    for _ in 0..d {
        pw = mat_mul(&pw, a, d);
        for i in 0..d {
            for j in 0..d {
                out[i][j] += pw[i][j];
            }
        }
    }
    out
}

/// Per-sample update for a given force `f = (DH^T l1)_k`.
struct Local {
    ph: [f64; 4],
    qn: [f64; 4],
    /// `d qn / d f`.
    m: Mat4,
}

fn local_step(id: MetricId, dth: f64, dt: f64, q: &[f64], p: &[f64], f: &[f64]) -> Local {
    let d = id.dim();
    let mut ph = [0.0; 4];
    let mut grad = [0.0; 4];
    for i in 0..d {
        ph[i] = p[i] - 0.5 * dt * f[i];
    }
    // Triangular dependence: d sweeps are exact.
    for _ in 0..d {
        g_inv_grad(id, q, &ph[..d], &mut grad[..d]);
        for i in 0..d {
            ph[i] = p[i] - 0.5 * dt * (0.5 * dth * grad[i] + f[i]);
        }
    }
    let dq = g_inv_apply_dq(id, q, &ph[..d]);
    let mut a = [[0.0; 4]; 4];
    for i in 0..d {
        for j in 0..d {
            a[i][j] = -0.5 * dt * dth * dq[j][i];
        }
    }
    let mut pmat = neumann(&a, d);
    pmat.iter_mut().for_each(|r| r.iter_mut().for_each(|x| *x *= -0.5 * dt));

    let mut v0 = [0.0; 4];
    g_inv_apply(id, q, &ph[..d], &mut v0[..d]);
    let mut qn = [0.0; 4];
    qn[..d].copy_from_slice(q);
    let mut v1 = [0.0; 4];
    for _ in 0..=d {
        g_inv_apply(id, &qn[..d], &ph[..d], &mut v1[..d]);
        for i in 0..d {
            qn[i] = q[i] + 0.5 * dt * dth * (v0[i] + v1[i]);
        }
    }
    if !(qn[0] > 0.0) {
        return Local { ph, qn, m: [[0.0; 4]; 4] };
    }
    let dqn = g_inv_apply_dq(id, &qn[..d], &ph[..d]);
    let mut b = [[0.0; 4]; 4];
    for i in 0..d {
        for j in 0..d {
            b[i][j] = 0.5 * dt * dth * dqn[i][j];
        }
    }
    let inv = neumann(&b, d);
    let (g0, g1) = (g_inv_mat(id, q), g_inv_mat(id, &qn[..d]));
    let mut gs = [[0.0; 4]; 4];
    for i in 0..d {
        for j in 0..d {
            gs[i][j] = 0.5 * dt * dth * (g0[i][j] + g1[i][j]);
        }
    }
    let m = mat_mul(&mat_mul(&inv, &gs, d), &pmat, d);
    Local { ph, qn, m }
}

/// Explicit M3 update for a given force `f = DH^T l1`: `p2*`, `p3*` do not
/// depend on `q`, then `p1*`, `q1'`, `q2'`, `q3'` follow in order.
fn m3_update(dth: f64, dt: f64, q: &[f64], p: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<Mat4>) {
    let n = q.len() / 3;
    let h = 0.5 * dt;
    let mut ph = vec![0.0; 3 * n];
    for k in 0..n {
        ph[3 * k + 1] = p[3 * k + 1] - h * f[3 * k + 1];
        ph[3 * k + 2] = p[3 * k + 2] - h * f[3 * k + 2];
    }
    let g = energy_grad_q(MetricId::M3, q, &ph);
    let mut qn = q.to_vec();
    for k in 0..n {
        ph[3 * k] = p[3 * k] - h * (g[3 * k] + f[3 * k]);
        qn[3 * k] = q[3 * k] + dt * dth * 0.25 * ph[3 * k];
    }
    if qn.iter().step_by(3).any(|x| !(*x > 0.0)) {
        return (ph, qn, Vec::new());
    }
    for k in 0..n {
        let (q1, q1n) = (q[3 * k], qn[3 * k]);
        qn[3 * k + 1] = q[3 * k + 1] + h * dth * ph[3 * k + 1] * (q1.powi(-2) + q1n.powi(-2));
        qn[3 * k + 2] = q[3 * k + 2] + h * dth * ph[3 * k + 2] * (mid(q, k).powi(6) + mid(&qn, k).powi(6));
    }
    let blocks = (0..n)
        .map(|k| {
            let (q1, q1n, p2, p3) = (q[3 * k], qn[3 * k], ph[3 * k + 1], ph[3 * k + 2]);
            let (m, mn) = (mid(q, k), mid(&qn, k));
            // d p* / d f_k, own-sample terms.
            let dp1 = [-h, -(dt * dt / 2.0) * dth * p2 / q1.powi(3), 0.75 * dt * dt * dth * m.powi(5) * p3];
            let dq1: Vec<f64> = dp1.iter().map(|x| dt * dth * 0.25 * x).collect();
            let mut b = [[0.0; 4]; 4];
            for j in 0..3 {
                b[0][j] = dq1[j];
                b[1][j] = -h * dth * p2 * 2.0 * q1n.powi(-3) * dq1[j];
                b[2][j] = h * dth * p3 * 3.0 * mn.powi(5) * dq1[j];
            }
            b[1][1] += h * dth * (q1.powi(-2) + q1n.powi(-2)) * -h;
            b[2][2] += h * dth * (m.powi(6) + mn.powi(6)) * -h;
            b
        })
        .collect();
    (ph, qn, blocks)
}

fn explicit_update(id: MetricId, dth: f64, dt: f64, q: &[f64], p: &[f64], f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<Mat4>) {
    if id == MetricId::M3 {
        return m3_update(dth, dt, q, p, f);
    }
    let d = id.dim();
    let locals: Vec<Local> = (0..q.len() / d).map(|k| local_step(id, dth, dt, &q[k * d..(k + 1) * d], &p[k * d..(k + 1) * d], &f[k * d..(k + 1) * d])).collect();
    let qn = locals.iter().flat_map(|l| l.qn[..d].to_vec()).collect();
    let ph = locals.iter().flat_map(|l| l.ph[..d].to_vec()).collect();
    (ph, qn, locals.iter().map(|l| l.m).collect())
}

/// Solver settings for [`Rattle`].
#[derive(Debug, Clone, Copy)]
pub struct RattleOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Drop the constraints entirely (unconstrained geodesic flow of `E`).
    pub constrained: bool,
}

impl Default for RattleOptions {
    fn default() -> Self {
        RattleOptions { tol: 1e-12, max_iter: 50, constrained: true }
    }
}

/// Newton data of the last step.
#[derive(Debug, Clone, Default)]
pub struct StepReport {
    pub iterations: usize,
    pub history: Vec<f64>,
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
}

/// RATTLE integrator with warm-started multipliers.
#[derive(Debug, Clone, Default)]
pub struct Rattle {
    pub options: RattleOptions,
    lambda: Option<Vec<f64>>,
    pub last: StepReport,
}

impl Rattle {
    pub fn new(options: RattleOptions) -> Self {
        Rattle { options, lambda: None, last: StepReport::default() }
    }

    pub fn step(&mut self, s: &HamiltonianState, dt: f64) -> Result<HamiltonianState> {
        let id = s.metric;
        check_supported(id)?;
        let d = id.dim();
        let n = s.len();
        let dth = s.dtheta();
        let left_domain = || Error::StepLeftDomain { t: s.t };
        let jq = constraint_jacobian(id, &s.q)?;
        let rows = jq.rows();
        let mut lambda = match &self.lambda {
            Some(l) if l.len() == rows && self.options.constrained => l.clone(),
            _ => vec![0.0; rows],
        };
        let mut history = Vec::new();
        let mut iterations = 0;
        let (ph, qn) = loop {
            let f = if self.options.constrained { jq.apply_t(&lambda) } else { vec![0.0; s.q.len()] };
            let (ph, qn, blocks) = explicit_update(id, dth, dt, &s.q, &s.p, &f);
            if (0..n).any(|k| !(qn[k * d] > 0.0)) || qn.iter().any(|x| !x.is_finite()) {
                return Err(left_domain());
            }
            if !self.options.constrained {
                break (ph, qn);
            }
            let r = constraint_values(id, &qn).map_err(|_| left_domain())?;
            let res = max_abs(&r);
            history.push(res);
            if res <= self.options.tol {
                break (ph, qn);
            }
            if iterations >= self.options.max_iter || !res.is_finite() || (history.len() > 3 && res > 1e6 * history[0].max(self.options.tol)) {
                self.lambda = None;
                return Err(Error::NewtonDivergence { history });
            }
            let jn = constraint_jacobian(id, &qn)?;
            let fac = assemble(&jn, &blocks, &jq).map_err(|_| Error::NewtonDivergence { history: history.clone() })?;
            let neg: Vec<f64> = r.iter().map(|x| -x).collect();
            let delta = fac.solve(&neg)?;
            lambda.iter_mut().zip(&delta).for_each(|(l, x)| *l += x);
            iterations += 1;
        };
        let gq = energy_grad_q(id, &qn, &ph);
        let ptilde: Vec<f64> = ph.iter().zip(&gq).map(|(p, g)| p - 0.5 * dt * g).collect();
        let (pn, mu) = if self.options.constrained { hidden_projection(id, &qn, &ptilde)? } else { (ptilde, vec![0.0; rows]) };
        self.last = StepReport { iterations, history, lambda1: lambda.clone(), lambda2: mu.iter().map(|m| 2.0 * m / dt).collect() };
        self.lambda = Some(lambda);
        Ok(HamiltonianState { metric: id, q: qn, p: pn, t: s.t + dt })
    }
}

/// One RATTLE step from a cold start.
pub fn rattle_step(s: &HamiltonianState, dt: f64) -> Result<HamiltonianState> {
    Rattle::new(RattleOptions::default()).step(s, dt)
}

/// `p - DH^T mu` with `DH g^-1 (p - DH^T mu) = 0`.
fn hidden_projection(id: MetricId, q: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let jac = constraint_jacobian(id, q)?;
    let blocks = g_inv_blocks(id, q);
    let fac = assemble(&jac, &blocks, &jac).map_err(|_| Error::RankDeficiency)?;
    let gp: Vec<f64> = energy_grad_p(id, q, p);
    let mu = fac.solve(&jac.apply(&gp).iter().map(|x| x / dtheta_of(id, q)).collect::<Vec<_>>())?;
    let corr = jac.apply_t(&mu);
    Ok((p.iter().zip(&corr).map(|(a, b)| a - b).collect(), mu))
}

/// `|DH(q) dE/dp(q, p)|_inf`.
pub fn hidden_norm(id: MetricId, q: &[f64], p: &[f64]) -> Result<f64> {
    let jac = constraint_jacobian(id, q)?;
    Ok(max_abs(&jac.apply(&energy_grad_p(id, q, p))))
}

/// Removes the constraint-normal part of `p_raw` so the hidden constraint holds.
pub fn project_consistent(id: MetricId, q: &[f64], p_raw: &[f64]) -> Result<HamiltonianState> {
    check_supported(id)?;
    if q.len() != p_raw.len() {
        return Err(Error::LengthMismatch { expected: q.len(), got: p_raw.len() });
    }
    let (p, _) = hidden_projection(id, q, p_raw)?;
    HamiltonianState::new(id, q.to_vec(), p)
}

/// Moves `q` onto `H = 0` by Newton steps of minimal `g`-norm.
pub fn project_to_manifold(id: MetricId, q: &[f64]) -> Result<Vec<f64>> {
    check_supported(id)?;
    let mut q = q.to_vec();
    let mut history = Vec::new();
    for _ in 0..50 {
        let r = constraint_values(id, &q)?;
        let res = max_abs(&r);
        history.push(res);
        if res <= 1e-13 * (1.0 + max_abs(&q)) {
            return Ok(q);
        }
        let jac = constraint_jacobian(id, &q)?;
        let blocks = g_inv_blocks(id, &q);
        let fac = assemble(&jac, &blocks, &jac).map_err(|_| Error::RankDeficiency)?;
        let mu = fac.solve(&r)?;
        let step = inv_mass_apply(id, &q, &jac.apply_t(&mu));
        q.iter_mut().zip(&step).for_each(|(x, s)| *x -= s);
        check_all(id, &q)?;
    }
    Err(Error::NewtonDivergence { history })
}

/// Exact image point of a closed curve: `q1`, `q2` from the transform, the
/// derivative components recomputed from forward differences so that
/// `H_diff = 0`. `H_cl` vanishes by telescoping of the central differences.
pub fn lift_curve(id: MetricId, c: &crate::curve::DiscreteCurve) -> Result<RPoint> {
    check_supported(id)?;
    if !c.is_closed() {
        return Err(Error::ClosednessMismatch);
    }
    let mut q = crate::rtransform::r_forward(id, c)?;
    let d = id.dim();
    let n = q.len();
    let dth = q.dtheta();
    for k in 0..n {
        let j = (k + 1) % n;
        let (q1, q1n) = (q.q[k * d], q.q[j * d]);
        let dq2 = crate::curve::wrap_angle(q.q[j * d + 1] - q.q[k * d + 1]) / dth;
        if id == MetricId::M3 {
            q.q[k * d + 2] = (0.5 * (q1 + q1n)).powi(2) * dq2;
        } else {
            q.q[k * d + 2] = 2.0 * (q1n - q1) / (q1 * dth);
            q.q[k * d + 3] = q1 * q1 * dq2;
        }
    }
    Ok(q)
}

/// Tangent at a lifted point matching `dR(c) h` in `q1`, `q2`, with the
/// remaining components from the linearised derivative constraint.
pub fn lift_velocity(id: MetricId, c: &crate::curve::DiscreteCurve, q: &RPoint, h: &crate::curve::VectorField) -> Result<Vec<f64>> {
    let mut k = crate::rtransform::dr(id, c, h)?;
    let d = id.dim();
    let n = q.len();
    let dth = q.dtheta();
    for i in 0..n {
        let j = (i + 1) % n;
        let (q1, q1n) = (q.q[i * d], q.q[j * d]);
        let dk2 = (k[j * d + 1] - k[i * d + 1]) / dth;
        if id == MetricId::M3 {
            let m = 0.5 * (q1 + q1n);
            k[i * d + 2] = q.q[i * d + 2] * (k[i * d] + k[j * d]) / m + m * m * dk2;
        } else {
            k[i * d + 2] = 2.0 * (k[j * d] / q1 - q1n * k[i * d] / (q1 * q1)) / dth;
            k[i * d + 3] = 2.0 * q.q[i * d + 3] * k[i * d] / q1 + q1 * q1 * dk2;
        }
    }
    Ok(k)
}

/// Momentum `p = g k / dtheta` for a position velocity `k`.
pub fn momentum_from_velocity(id: MetricId, q: &[f64], k: &[f64]) -> Vec<f64> {
    let d = id.dim();
    let dth = dtheta_of(id, q);
    let mut p = vec![0.0; q.len()];
    for s in 0..q.len() / d {
        if id == MetricId::M3 {
            let m = m3_inv_diag(q, s);
            (0..3).for_each(|i| p[3 * s + i] = k[3 * s + i] / m[i]);
        } else {
            crate::fiber::g_apply(id, &q[s * d..(s + 1) * d], &k[s * d..(s + 1) * d], &mut p[s * d..(s + 1) * d]);
        }
    }
    p.iter_mut().for_each(|x| *x /= dth);
    p
}

/// Consistent phase-space state for the curve `c` moving with velocity `h`.
pub fn initial_state(id: MetricId, c: &crate::curve::DiscreteCurve, h: &crate::curve::VectorField) -> Result<HamiltonianState> {
    let q = lift_curve(id, c)?;
    let k = lift_velocity(id, c, &q, h)?;
    let p = momentum_from_velocity(id, &q.q, &k);
    let qm = project_to_manifold(id, &q.q)?;
    project_consistent(id, &qm, &p)
}

/// Per-step monitors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub t: f64,
    pub energy: f64,
    pub constraint_norm: f64,
    pub hidden_norm: f64,
    pub newton_iterations: usize,
}

fn diagnose(s: &HamiltonianState, iterations: usize) -> Result<StepDiagnostics> {
    Ok(StepDiagnostics {
        t: s.t,
        energy: discrete_energy(s.metric, &s.q, &s.p)?,
        constraint_norm: max_abs(&constraint_values(s.metric, &s.q)?),
        hidden_norm: hidden_norm(s.metric, &s.q, &s.p)?,
        newton_iterations: iterations,
    })
}

/// States at `t = k dt` and their diagnostics.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub states: Vec<HamiltonianState>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Integrates from `s0` to time `t_end` with `round(t_end / dt)` steps.
pub fn simulate(s0: &HamiltonianState, t_end: f64, dt: f64) -> Result<Simulation> {
    simulate_with(s0, t_end, dt, RattleOptions::default())
}

pub fn simulate_with(s0: &HamiltonianState, t_end: f64, dt: f64, options: RattleOptions) -> Result<Simulation> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(Error::OutOfRange { value: dt, lo: 0.0, hi: f64::INFINITY });
    }
    let steps = (t_end / dt).round() as usize;
    let mut rattle = Rattle::new(options);
    let mut states = Vec::with_capacity(steps + 1);
    let mut diagnostics = Vec::with_capacity(steps + 1);
    diagnostics.push(diagnose(s0, 0)?);
    states.push(s0.clone());
    for _ in 0..steps {
        let next = rattle.step(states.last().expect("non-empty"), dt)?;
        diagnostics.push(diagnose(&next, rattle.last.iterations)?);
        states.push(next);
    }
    Ok(Simulation { states, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::{DiscreteCurve, Vec2, VectorField};
    use crate::rtransform::{dr, r_forward};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Circle with initial velocity `(0, sin theta)`, lifted to a consistent state.
    fn circle_state(n: usize) -> HamiltonianState {
        let c = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
        let h = VectorField::from_fn(n, true, |t| Vec2::new(0.0, t.sin()));
        lift(&c, &h)
    }

    fn lift(c: &DiscreteCurve, h: &VectorField) -> HamiltonianState {
        initial_state(MetricId::M3, c, h).unwrap()
    }

    #[test]
    fn lift_is_exact() {
        let c = DiscreteCurve::from_fn(64, true, |t| Vec2::new(t.cos() * (1.0 + 0.2 * (3.0 * t).cos()), t.sin())).unwrap();
        let h = VectorField::from_fn(64, true, |t| Vec2::new((2.0 * t).sin(), 0.3 * t.cos()));
        let q = lift_curve(MetricId::M3, &c).unwrap();
        assert!(max_abs(&constraint_values(MetricId::M3, &q.q).unwrap()) < 1e-12);
        let k = lift_velocity(MetricId::M3, &c, &q, &h).unwrap();
        let jac = constraint_jacobian(MetricId::M3, &q.q).unwrap();
        assert!(max_abs(&jac.apply(&k)) < 1e-11);
        let fr = c.frame().unwrap();
        let r = r_forward(MetricId::M3, &c).unwrap();
        for i in 0..64 {
            assert_eq!(q.q[3 * i], r.q[3 * i]);
            assert_eq!(q.q[3 * i + 1], fr.alpha[i]);
        }
        let s = lift(&c, &h);
        let dk = dr(MetricId::M3, &c, &h).unwrap();
        let vel = energy_grad_p(MetricId::M3, &s.q, &s.p);
        for i in 0..64 {
            assert!((vel[3 * i] - dk[3 * i]).abs() < 1e-10 && (vel[3 * i + 1] - dk[3 * i + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_values() {
        let n = 40;
        let q: Vec<f64> = (0..n).flat_map(|k| [1.0, 0.1 * k as f64, 0.3]).collect();
        assert_eq!(discrete_energy(MetricId::M3, &q, &vec![0.0; 3 * n]).unwrap(), 0.0);
        let a = 0.7;
        let p: Vec<f64> = (0..n).flat_map(|_| [0.0, a, 0.0]).collect();
        let e = discrete_energy(MetricId::M3, &q, &p).unwrap();
        assert!((e - std::f64::consts::PI * a * a).abs() < 1e-12);
    }

    #[test]
    fn energy_gradients_match_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        for id in [MetricId::M3, MetricId::M4] {
            let d = id.dim();
            let q: Vec<f64> = (0..n * d).map(|i| if i % d == 0 { rng.gen_range(0.5..1.5) } else { rng.gen_range(-1.0..1.0) }).collect();
            let p: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (gq, gp) = (energy_grad_q(id, &q, &p), energy_grad_p(id, &q, &p));
            let e = |q: &[f64], p: &[f64]| {
                let dd = id.dim();
                let mut tmp = [0.0; 4];
                let mut s = 0.0;
                let nn = q.len() / dd;
                if id == MetricId::M3 {
                    for k in 0..nn {
                        let m = 0.5 * (q[3 * k] + q[3 * ((k + 1) % nn)]);
                        s += p[3 * k].powi(2) / 4.0 + (p[3 * k + 1] / q[3 * k]).powi(2) + m.powi(6) * p[3 * k + 2].powi(2);
                    }
                    return 0.5 * s * dtheta_of(id, q);
                }
                for k in 0..nn {
                    g_inv_apply(id, &q[k * dd..(k + 1) * dd], &p[k * dd..(k + 1) * dd], &mut tmp[..dd]);
                    s += tmp[..dd].iter().zip(&p[k * dd..(k + 1) * dd]).map(|(a, b)| a * b).sum::<f64>();
                }
                0.5 * s * dtheta_of(id, q)
            };
            for i in 0..n * d {
                let eps = 1e-6;
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[i] += eps;
                qm[i] -= eps;
                let fd = (e(&qp, &p) - e(&qm, &p)) / (2.0 * eps);
                assert!((fd - gq[i]).abs() < 1e-6 * (1.0 + fd.abs()));
                let (mut pp, mut pm) = (p.clone(), p.clone());
                pp[i] += eps;
                pm[i] -= eps;
                let fd = (e(&q, &pp) - e(&q, &pm)) / (2.0 * eps);
                assert!((fd - gp[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn jacobian_matches_fd() {
        let ids: &[MetricId] = if cfg!(feature = "m4") { &[MetricId::M3, MetricId::M4] } else { &[MetricId::M3] };
        for &id in ids {
            let c = DiscreteCurve::ellipse(24, 1.0, 0.6);
            let q = r_forward(id, &c).unwrap().q;
            let jac = constraint_jacobian(id, &q).unwrap().to_dense();
            for i in 0..q.len() {
                let eps = 1e-7;
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[i] += eps;
                qm[i] -= eps;
                let (hp, hm) = (constraint_values(id, &qp).unwrap(), constraint_values(id, &qm).unwrap());
                for r in 0..hp.len() {
                    let fd = (hp[r] - hm[r]) / (2.0 * eps);
                    assert!((fd - jac[(r, i)]).abs() < 1e-6 * (1.0 + fd.abs()), "{id} row {r} col {i}");
                }
            }
        }
    }

    #[test]
    fn m4_requires_feature() {
        let q = r_forward(MetricId::M4, &DiscreteCurve::circle(16, 1.0, Vec2::zeros())).unwrap().q;
        let r = HamiltonianState::new(MetricId::M4, q.clone(), vec![0.0; q.len()]);
        assert_eq!(r.is_ok(), cfg!(feature = "m4"));
        assert!(HamiltonianState::new(MetricId::M2, vec![1.0; 32], vec![0.0; 32]).is_err());
    }

    #[test]
    fn zero_momentum_is_equilibrium() {
        let c = DiscreteCurve::ellipse(32, 1.0, 0.5);
        let q = project_to_manifold(MetricId::M3, &r_forward(MetricId::M3, &c).unwrap().q).unwrap();
        let s = HamiltonianState::new(MetricId::M3, q.clone(), vec![0.0; q.len()]).unwrap();
        let mut r = Rattle::default();
        r.options = RattleOptions::default();
        let s1 = r.step(&s, 1e-2).unwrap();
        assert_eq!(s1.q, q);
        assert!(s1.p.iter().all(|x| *x == 0.0));
        assert!(r.last.lambda1.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn free_particle_step() {
        // No constraints and momentum only in q1, where g^-1 = 1/4 is constant.
        let n = 16;
        let q: Vec<f64> = (0..n).flat_map(|k| [1.0, k as f64, 0.5]).collect();
        let p: Vec<f64> = (0..n).flat_map(|k| [0.3 + 0.01 * k as f64, 0.0, 0.0]).collect();
        let s = HamiltonianState { metric: MetricId::M3, q: q.clone(), p: p.clone(), t: 0.0 };
        let dt = 0.1;
        let mut r = Rattle::new(RattleOptions { constrained: false, ..Default::default() });
        let s1 = r.step(&s, dt).unwrap();
        let dth = s.dtheta();
        for i in 0..3 * n {
            let expect = if i % 3 == 0 { q[i] + dt * 0.25 * p[i] * dth } else { q[i] };
            assert!((s1.q[i] - expect).abs() < 1e-15);
            assert_eq!(s1.p[i], p[i]);
        }
    }

    #[test]
    fn consistent_projection() {
        let s = circle_state(40);
        assert!(hidden_norm(MetricId::M3, &s.q, &s.p).unwrap() < 1e-11);
        let again = project_consistent(MetricId::M3, &s.q, &s.p).unwrap();
        assert!(again.p.iter().zip(&s.p).all(|(a, b)| (a - b).abs() < 1e-12));
        let jac = constraint_jacobian(MetricId::M3, &s.q).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu: Vec<f64> = (0..jac.rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let normal = jac.apply_t(&mu);
        let z = project_consistent(MetricId::M3, &s.q, &normal).unwrap();
        assert!(z.p.iter().all(|x| x.abs() < 1e-10));
        let raw: Vec<f64> = (0..s.q.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pr = project_consistent(MetricId::M3, &s.q, &raw).unwrap();
        assert!(hidden_norm(MetricId::M3, &s.q, &pr.p).unwrap() < 1e-11);
    }

    #[test]
    fn short_run_keeps_constraints() {
        let s = circle_state(50);
        let sim = simulate(&s, 0.2, 1e-2).unwrap();
        let e0 = sim.diagnostics[0].energy;
        for d in &sim.diagnostics {
            assert!(d.constraint_norm < 1e-9 && d.hidden_norm < 1e-9);
            assert!((d.energy - e0).abs() < 1e-3 * e0);
        }
    }

    #[test]
    fn project_to_manifold_lands_on_constraints() {
        let c = DiscreteCurve::from_fn(64, true, |t| Vec2::new(t.cos() * (1.0 + 0.2 * (3.0 * t).cos()), t.sin())).unwrap();
        let q0 = r_forward(MetricId::M3, &c).unwrap().q;
        assert!(max_abs(&constraint_values(MetricId::M3, &q0).unwrap()) > 1e-6);
        let q = project_to_manifold(MetricId::M3, &q0).unwrap();
        assert!(max_abs(&constraint_values(MetricId::M3, &q).unwrap()) < 1e-12);
        // The derivative constraint is a forward difference, so the nearest
        // admissible point sits about half a cell away.
        let dth = std::f64::consts::TAU / 64.0;
        assert!(max_abs(&q.iter().zip(&q0).map(|(a, b)| a - b).collect::<Vec<_>>()) < dth);
    }
}
