//! Pointwise fibre metrics `g_q` of the transformed spaces.
//!
//! * M1: Euclidean on `R^2`.
//! * M2: `diag(4, q1^-6)`.
//! * M3: `diag(4, q1^2, q1^-6)`.
//! * M4: `4 dq1^2 + (q1^2 + q4^2 q1^-6) dq2^2 - 2 q4 q1^-4 dq2 dq3 + q1^-2 dq3^2 + q1^-6 dq4^2`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metric::MetricId;

/// Checks the positivity pattern of one sample.
pub fn check_pattern(id: MetricId, q: &[f64], index: usize) -> Result<()> {
    if q.len() != id.dim() {
        return Err(Error::LengthMismatch { expected: id.dim(), got: q.len() });
    }
    for (component, &value) in q.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonPositive { index, component, value });
        }
    }
    let positive: &[usize] = match id {
        MetricId::M1 => &[0, 1],
        _ => &[0],
    };
    for &component in positive {
        if !(q[component] > 0.0) {
            return Err(Error::NonPositive { index, component, value: q[component] });
        }
    }
    Ok(())
}

/// Dense `d x d` matrix of `g_q`.
pub fn g_matrix(id: MetricId, q: &[f64]) -> DMatrix<f64> {
    let d = id.dim();
    let mut m = DMatrix::zeros(d, d);
    match id {
        MetricId::M1 => m.fill_with_identity(),
        MetricId::M2 => {
            m[(0, 0)] = 4.0;
            m[(1, 1)] = q[0].powi(-6);
        }
        MetricId::M3 => {
            m[(0, 0)] = 4.0;
            m[(1, 1)] = q[0] * q[0];
            m[(2, 2)] = q[0].powi(-6);
        }
        MetricId::M4 => {
            let (q1, q4) = (q[0], q[3]);
            m[(0, 0)] = 4.0;
            m[(1, 1)] = q1 * q1 + q4 * q4 * q1.powi(-6);
            m[(1, 2)] = -q4 * q1.powi(-4);
            m[(2, 1)] = -q4 * q1.powi(-4);
            m[(2, 2)] = q1.powi(-2);
            m[(3, 3)] = q1.powi(-6);
        }
    }
    m
}

/// Closed-form inverse of `g_q`.
pub fn g_inv_matrix(id: MetricId, q: &[f64]) -> DMatrix<f64> {
    let d = id.dim();
    let mut m = DMatrix::zeros(d, d);
    match id {
        MetricId::M1 => m.fill_with_identity(),
        MetricId::M2 => {
            m[(0, 0)] = 0.25;
            m[(1, 1)] = q[0].powi(6);
        }
        MetricId::M3 => {
            m[(0, 0)] = 0.25;
            m[(1, 1)] = q[0].powi(-2);
            m[(2, 2)] = q[0].powi(6);
        }
        MetricId::M4 => {
            // The (q2, q3) block has unit determinant.
            let (q1, q4) = (q[0], q[3]);
            m[(0, 0)] = 0.25;
            m[(1, 1)] = q1.powi(-2);
            m[(1, 2)] = q4 * q1.powi(-4);
            m[(2, 1)] = q4 * q1.powi(-4);
            m[(2, 2)] = q1 * q1 + q4 * q4 * q1.powi(-6);
            m[(3, 3)] = q1.powi(6);
        }
    }
    m
}

/// `g_q(h, k)`.
pub fn g_eval(id: MetricId, q: &[f64], h: &[f64], k: &[f64]) -> f64 {
    match id {
        MetricId::M1 => h[0] * k[0] + h[1] * k[1],
        MetricId::M2 => 4.0 * h[0] * k[0] + q[0].powi(-6) * h[1] * k[1],
        MetricId::M3 => 4.0 * h[0] * k[0] + q[0] * q[0] * h[1] * k[1] + q[0].powi(-6) * h[2] * k[2],
        MetricId::M4 => {
            let (q1, q4) = (q[0], q[3]);
            4.0 * h[0] * k[0]
                + (q1 * q1 + q4 * q4 * q1.powi(-6)) * h[1] * k[1]
                - q4 * q1.powi(-4) * (h[1] * k[2] + h[2] * k[1])
                + q1.powi(-2) * h[2] * k[2]
                + q1.powi(-6) * h[3] * k[3]
        }
    }
}

/// Lowers an index: `g_q h`.
pub fn g_apply(id: MetricId, q: &[f64], h: &[f64], out: &mut [f64]) {
    match id {
        MetricId::M1 => out.copy_from_slice(h),
        MetricId::M2 => {
            out[0] = 4.0 * h[0];
            out[1] = q[0].powi(-6) * h[1];
        }
        MetricId::M3 => {
            out[0] = 4.0 * h[0];
            out[1] = q[0] * q[0] * h[1];
            out[2] = q[0].powi(-6) * h[2];
        }
        MetricId::M4 => {
            let (q1, q4) = (q[0], q[3]);
            out[0] = 4.0 * h[0];
            out[1] = (q1 * q1 + q4 * q4 * q1.powi(-6)) * h[1] - q4 * q1.powi(-4) * h[2];
            out[2] = -q4 * q1.powi(-4) * h[1] + q1.powi(-2) * h[2];
            out[3] = q1.powi(-6) * h[3];
        }
    }
}

/// Raises an index: `g_q^{-1} p`.
pub fn g_inv_apply(id: MetricId, q: &[f64], p: &[f64], out: &mut [f64]) {
    match id {
        MetricId::M1 => out.copy_from_slice(p),
        MetricId::M2 => {
            out[0] = 0.25 * p[0];
            out[1] = q[0].powi(6) * p[1];
        }
        MetricId::M3 => {
            out[0] = 0.25 * p[0];
            out[1] = q[0].powi(-2) * p[1];
            out[2] = q[0].powi(6) * p[2];
        }
        MetricId::M4 => {
            let (q1, q4) = (q[0], q[3]);
            out[0] = 0.25 * p[0];
            out[1] = q1.powi(-2) * p[1] + q4 * q1.powi(-4) * p[2];
            out[2] = q4 * q1.powi(-4) * p[1] + (q1 * q1 + q4 * q4 * q1.powi(-6)) * p[2];
            out[3] = q1.powi(6) * p[3];
        }
    }
}

/// `g_q^{-1}(p, p)`.
pub fn g_inv_eval(id: MetricId, q: &[f64], p: &[f64]) -> f64 {
    let mut tmp = [0.0; 4];
    g_inv_apply(id, q, p, &mut tmp[..id.dim()]);
    tmp[..id.dim()].iter().zip(p).map(|(a, b)| a * b).sum()
}

/// Gradient in `q` of `g_q^{-1}(p, p)`; only `q1` (and `q4` for M4) enter.
pub fn g_inv_grad(id: MetricId, q: &[f64], p: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    match id {
        MetricId::M1 => {}
        MetricId::M2 => out[0] = 6.0 * q[0].powi(5) * p[1] * p[1],
        MetricId::M3 => out[0] = -2.0 * q[0].powi(-3) * p[1] * p[1] + 6.0 * q[0].powi(5) * p[2] * p[2],
        MetricId::M4 => {
            let (q1, q4) = (q[0], q[3]);
            let (p2, p3, p4) = (p[1], p[2], p[3]);
            out[0] = -2.0 * q1.powi(-3) * p2 * p2 - 8.0 * q4 * q1.powi(-5) * p2 * p3
                + (2.0 * q1 - 6.0 * q4 * q4 * q1.powi(-7)) * p3 * p3
                + 6.0 * q1.powi(5) * p4 * p4;
            out[3] = 2.0 * q1.powi(-4) * p2 * p3 + 2.0 * q4 * q1.powi(-6) * p3 * p3;
        }
    }
}

/// Jacobian `d(g_q^{-1} p)/dq` as rows `[i][j] = d(g^-1 p)_i / dq_j`.
/// Only the `q1` column (and `q4` for M4) is nonzero.
pub fn g_inv_apply_dq(id: MetricId, q: &[f64], p: &[f64]) -> [[f64; 4]; 4] {
    let mut m = [[0.0; 4]; 4];
    match id {
        MetricId::M1 => {}
        MetricId::M2 => m[1][0] = 6.0 * q[0].powi(5) * p[1],
        MetricId::M3 => {
            m[1][0] = -2.0 * q[0].powi(-3) * p[1];
            m[2][0] = 6.0 * q[0].powi(5) * p[2];
        }
        MetricId::M4 => {
            let (q1, q4) = (q[0], q[3]);
            let (p2, p3, p4) = (p[1], p[2], p[3]);
            m[1][0] = -2.0 * q1.powi(-3) * p2 - 4.0 * q4 * q1.powi(-5) * p3;
            m[2][0] = -4.0 * q4 * q1.powi(-5) * p2 + (2.0 * q1 - 6.0 * q4 * q4 * q1.powi(-7)) * p3;
            m[3][0] = 6.0 * q1.powi(5) * p4;
            m[1][3] = q1.powi(-4) * p3;
            m[2][3] = q1.powi(-4) * p2 + 2.0 * q4 * q1.powi(-6) * p3;
        }
    }
    m
}
