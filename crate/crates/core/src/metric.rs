//! The four second-order Sobolev metrics, their inertia operators and the
//! quadratic source term of the geodesic equation.
//!
//! With `D_s h = a v + b n` and `D_s^2 h = e v + f n` the integrands are
//!
//! | id | integrand |
//! |----|-----------|
//! | M1 | `kappa^{-3/2} f_h f_k + a_h a_k` |
//! | M2 | `a_h a_k + f_h f_k` |
//! | M3 | `a_h a_k + b_h b_k + f_h f_k` |
//! | M4 | `a_h a_k + b_h b_k + e_h e_k + f_h f_k` |
//!
//! all integrated against `ds`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curve::{check_len, rot90, CurveFrame, DiscreteCurve, FieldJet, Vec2, VectorField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    M1,
    M2,
    M3,
    M4,
}

impl MetricId {
    pub const ALL: [MetricId; 4] = [MetricId::M1, MetricId::M2, MetricId::M3, MetricId::M4];

    /// Dimension of the fibre of the transform.
    pub fn dim(self) -> usize {
        match self {
            MetricId::M1 | MetricId::M2 => 2,
            MetricId::M3 => 3,
            MetricId::M4 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricId::M1 => "M1",
            MetricId::M2 => "M2",
            MetricId::M3 => "M3",
            MetricId::M4 => "M4",
        }
    }

    /// Whether infinitesimal rotations lie in the kernel of the metric.
    pub fn rotation_in_kernel(self) -> bool {
        matches!(self, MetricId::M1 | MetricId::M2)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "M1" | "1" => Ok(MetricId::M1),
            "M2" | "2" => Ok(MetricId::M2),
            "M3" | "3" => Ok(MetricId::M3),
            "M4" | "4" => Ok(MetricId::M4),
            other => Err(Error::Format(format!("unknown metric `{other}`"))),
        }
    }
}

/// Default convexity threshold for M1.
pub const EPS_CONV: f64 = 1e-8;

pub(crate) fn check_convex(fr: &CurveFrame) -> Result<()> {
    let (index, min_kappa) =
        fr.kappa.iter().copied().enumerate().fold((0, f64::INFINITY), |acc, (i, k)| if k < acc.1 { (i, k) } else { acc });
    if min_kappa <= EPS_CONV {
        Err(Error::NotConvex { index, min_kappa })
    } else {
        Ok(())
    }
}

/// Frame of `c`, with the convexity check applied for M1.
pub fn metric_frame(id: MetricId, c: &DiscreteCurve) -> Result<CurveFrame> {
    let fr = c.frame()?;
    if id == MetricId::M1 {
        check_convex(&fr)?;
    }
    Ok(fr)
}

/// Pointwise integrand `W(h, k)` (without the `ds` weight).
pub(crate) fn integrand(id: MetricId, kappa: f64, x: [f64; 4], y: [f64; 4]) -> f64 {
    let [a1, b1, e1, f1] = x;
    let [a2, b2, e2, f2] = y;
    match id {
        MetricId::M1 => kappa.powf(-1.5) * (f1 * f2) + a1 * a2,
        MetricId::M2 => a1 * a2 + f1 * f2,
        MetricId::M3 => a1 * a2 + b1 * b2 + f1 * f2,
        MetricId::M4 => a1 * a2 + b1 * b2 + e1 * e2 + f1 * f2,
    }
}

fn jet_at(j: &FieldJet, k: usize) -> [f64; 4] {
    [j.a[k], j.b[k], j.e[k], j.f[k]]
}

/// `G_c(h, k)` from a precomputed frame.
pub fn metric_eval_frame(id: MetricId, fr: &CurveFrame, h: &VectorField, k: &VectorField) -> Result<f64> {
    let jh = fr.jet(h)?;
    let jk = fr.jet(k)?;
    let w = fr.weights();
    Ok((0..fr.len()).map(|i| integrand(id, fr.kappa[i], jet_at(&jh, i), jet_at(&jk, i)) * fr.speed[i] * w[i]).sum())
}

pub fn metric_eval(id: MetricId, c: &DiscreteCurve, h: &VectorField, k: &VectorField) -> Result<f64> {
    let fr = metric_frame(id, c)?;
    metric_eval_frame(id, &fr, h, k)
}

/// `L_c h` from a precomputed frame (closed curves).
///
/// Built as the exact summation-by-parts adjoint of the discrete metric:
/// with weights `(A, B, E, F)` of the jet of `h`,
/// `L h = -D_s(A v) - D_s(B n) + D_s(D_s E v + kappa E n) + D_s(D_s F n - kappa F v)`,
/// which is the discrete form of `D_s^2(F n) + D_s^2(E v) - D_s(A v) - D_s(B n)`.
pub fn apply_l_frame(id: MetricId, fr: &CurveFrame, h: &VectorField) -> Result<VectorField> {
    if !fr.closed {
        return Err(Error::OpenCurveUnsupported);
    }
    let j = fr.jet(h)?;
    let n = fr.len();
    let zero = vec![0.0; n];
    let (wa, wb, we, wf): (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) = match id {
        MetricId::M1 => (j.a.clone(), zero.clone(), zero, (0..n).map(|k| fr.kappa[k].powf(-1.5) * j.f[k]).collect()),
        MetricId::M2 => (j.a.clone(), zero.clone(), zero, j.f.clone()),
        MetricId::M3 => (j.a.clone(), j.b.clone(), zero, j.f.clone()),
        MetricId::M4 => (j.a.clone(), j.b.clone(), j.e.clone(), j.f.clone()),
    };
    let dse = fr.ds(&we);
    let dsf = fr.ds(&wf);
    let inner: Vec<Vec2> = (0..n)
        .map(|k| {
            let (v, nn, kap) = (fr.v[k], fr.n[k], fr.kappa[k]);
            v * (dse[k] - kap * wf[k] - wa[k]) + nn * (dsf[k] + kap * we[k] - wb[k])
        })
        .collect();
    Ok(VectorField(fr.ds(&inner)))
}

pub fn apply_l(id: MetricId, c: &DiscreteCurve, h: &VectorField) -> Result<VectorField> {
    let fr = metric_frame(id, c)?;
    apply_l_frame(id, &fr, h)
}

/// Momentum density `p = L_c h |c'|`, so that `sum <p_k, k_k> dtheta = G_c(h, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumDensity(pub Vec<Vec2>);

impl MomentumDensity {
    pub fn pair(&self, h: &VectorField, dtheta: f64) -> f64 {
        self.0.iter().zip(h.values()).map(|(p, h)| p.dot(h)).sum::<f64>() * dtheta
    }

    pub fn values(&self) -> &[Vec2] {
        &self.0
    }
}

pub fn momentum_frame(id: MetricId, fr: &CurveFrame, h: &VectorField) -> Result<MomentumDensity> {
    let l = apply_l_frame(id, fr, h)?;
    Ok(MomentumDensity(l.0.iter().zip(&fr.speed).map(|(l, s)| l * *s).collect()))
}

pub fn momentum(id: MetricId, c: &DiscreteCurve, h: &VectorField) -> Result<MomentumDensity> {
    let fr = metric_frame(id, c)?;
    momentum_frame(id, &fr, h)
}

/// Right-hand side `1/2 H_c(h, h)` of `p_t = 1/2 H_c(c_t, c_t)` as a
/// momentum density, i.e. `d/dtheta Y` for the bracketed field `Y`:
///
/// * M1: `Y = 1/2 a^2 v - a b n - D_s(kappa^{-3/2} b f) v + kappa^{-3/2} e f n - 3/4 D_s(kappa^{-5/2} f^2 n)`
/// * M2: `Y = 1/2 a^2 v - a b n - D_s(b f) v + e f n + 3/2 f^2 v`
/// * M3: `Y = 1/2 |D_s h|^2 v - D_s(b f) v + e f n + 3/2 f^2 v`
/// * M4: `Y = 3/2 |D_s^2 h|^2 v - D_s(<D_s h, D_s^2 h>) v + 1/2 |D_s h|^2 v`
pub fn hc_quadratic_frame(id: MetricId, fr: &CurveFrame, h: &VectorField) -> Result<MomentumDensity> {
    if !fr.closed {
        return Err(Error::OpenCurveUnsupported);
    }
    let j = fr.jet(h)?;
    let n = fr.len();
    let (a, b, e, f) = (&j.a, &j.b, &j.e, &j.f);
    let y: Vec<Vec2> = match id {
        MetricId::M1 => {
            let w: Vec<f64> = fr.kappa.iter().map(|k| k.powf(-1.5)).collect();
            let bf: Vec<f64> = (0..n).map(|k| w[k] * b[k] * f[k]).collect();
            let dbf = fr.ds(&bf);
            let sq: Vec<Vec2> = (0..n).map(|k| fr.n[k] * (fr.kappa[k].powf(-2.5) * f[k] * f[k])).collect();
            let dsq = fr.ds(&sq);
            (0..n)
                .map(|k| {
                    fr.v[k] * (0.5 * a[k] * a[k] - dbf[k]) + fr.n[k] * (w[k] * e[k] * f[k] - a[k] * b[k]) - dsq[k] * 0.75
                })
                .collect()
        }
        MetricId::M2 | MetricId::M3 => {
            let bf: Vec<f64> = (0..n).map(|k| b[k] * f[k]).collect();
            let dbf = fr.ds(&bf);
            (0..n)
                .map(|k| {
                    let (tv, tn) = if id == MetricId::M2 {
                        (0.5 * a[k] * a[k], -a[k] * b[k])
                    } else {
                        (0.5 * (a[k] * a[k] + b[k] * b[k]), 0.0)
                    };
                    fr.v[k] * (tv - dbf[k] + 1.5 * f[k] * f[k]) + fr.n[k] * (tn + e[k] * f[k])
                })
                .collect()
        }
        MetricId::M4 => {
            let cross: Vec<f64> = (0..n).map(|k| a[k] * e[k] + b[k] * f[k]).collect();
            let dc = fr.ds(&cross);
            (0..n)
                .map(|k| {
                    fr.v[k]
                        * (1.5 * (e[k] * e[k] + f[k] * f[k]) - dc[k] + 0.5 * (a[k] * a[k] + b[k] * b[k]))
                })
                .collect()
        }
    };
    Ok(MomentumDensity(fr.d_theta(&y)))
}

pub fn hc_quadratic(id: MetricId, c: &DiscreteCurve, h: &VectorField) -> Result<MomentumDensity> {
    let fr = metric_frame(id, c)?;
    hc_quadratic_frame(id, &fr, h)
}

/// Null space of `G_c`: translations, plus rotations for M1 and M2.
pub fn kernel_basis(id: MetricId, c: &DiscreteCurve) -> Vec<VectorField> {
    let n = c.len();
    let mut out = vec![VectorField::constant(n, Vec2::new(1.0, 0.0)), VectorField::constant(n, Vec2::new(0.0, 1.0))];
    if id.rotation_in_kernel() {
        out.push(VectorField(c.points().iter().map(|&p| rot90(p)).collect()));
    }
    out
}

/// Removes the `ds`-weighted L2 projection of `h` onto the kernel fields.
pub fn remove_kernel(id: MetricId, c: &DiscreteCurve, h: &VectorField) -> Result<VectorField> {
    check_len(c.len(), h.len())?;
    let fr = c.frame()?;
    let w: Vec<f64> = fr.weights().iter().zip(&fr.speed).map(|(w, s)| w * s).collect();
    let ip = |x: &VectorField, y: &VectorField| -> f64 {
        x.values().iter().zip(y.values()).zip(&w).map(|((a, b), w)| a.dot(b) * w).sum()
    };
    let mut basis: Vec<VectorField> = Vec::new();
    for k in kernel_basis(id, c) {
        let mut u = k;
        for b in &basis {
            u = u.sub(&b.scale(ip(&u, b)));
        }
        let nrm = ip(&u, &u).sqrt();
        if nrm > 1e-14 {
            basis.push(u.scale(1.0 / nrm));
        }
    }
    let mut out = h.clone();
    for b in &basis {
        out = out.sub(&b.scale(ip(&out, b)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn wobbly(n: usize) -> DiscreteCurve {
        DiscreteCurve::from_fn(n, true, |t| {
            let r = 1.0 + 0.06 * (2.0 * t).cos() + 0.02 * (3.0 * t + 0.4).sin();
            Vec2::new(r * t.cos() + 0.2, 0.8 * r * t.sin())
        })
        .unwrap()
    }

    fn field(n: usize, closed: bool, s: f64) -> VectorField {
        VectorField::from_fn(n, closed, |t| {
            Vec2::new((t + s).sin() + 0.3 * (2.0 * t).cos(), 0.5 * (3.0 * t - s).cos() - 0.2 * t.sin())
        })
    }

    #[test]
    fn symmetric_and_semidefinite() {
        let c = wobbly(128);
        let (h, k) = (field(128, true, 0.1), field(128, true, 1.3));
        for id in MetricId::ALL {
            let ghk = metric_eval(id, &c, &h, &k).unwrap();
            let gkh = metric_eval(id, &c, &k, &h).unwrap();
            assert_eq!(ghk, gkh);
            assert!(metric_eval(id, &c, &h, &h).unwrap() > 0.0);
        }
    }

    #[test]
    fn kernels_vanish() {
        let c = wobbly(96);
        for id in MetricId::ALL {
            let basis = kernel_basis(id, &c);
            assert_eq!(basis.len(), if id.rotation_in_kernel() { 3 } else { 2 });
            for b in &basis {
                assert!(metric_eval(id, &c, b, b).unwrap().abs() < 1e-10);
                let l = apply_l(id, &c, b).unwrap();
                assert!(l.max_norm() < 1e-8, "{id} {}", l.max_norm());
            }
        }
        let circle = DiscreteCurve::circle(64, 1.0, Vec2::zeros());
        let jc = VectorField(circle.points().iter().map(|&p| rot90(p)).collect());
        assert!(metric_eval(MetricId::M4, &circle, &jc, &jc).unwrap() > 1.0);
    }

    #[test]
    fn operator_is_adjoint_of_metric() {
        let c = wobbly(128);
        let (h, k) = (field(128, true, 0.4), field(128, true, 2.0));
        let dt = c.dtheta();
        for id in MetricId::ALL {
            let p = momentum(id, &c, &h).unwrap();
            let g = metric_eval(id, &c, &h, &k).unwrap();
            assert!((p.pair(&k, dt) - g).abs() < 1e-10 * g.abs().max(1.0), "{id}");
        }
    }

    #[test]
    fn m4_on_circle_matches_symbolic_value() {
        // h = sin(t) n = -sin(t)(cos t, sin t) = -(sin 2t, 1 - cos 2t)/2 on the unit
        // circle, so h' = -(cos 2t, sin 2t) and h'' = 2(sin 2t, -cos 2t):
        // |h'|^2 = 1, |h''|^2 = 4 and the metric is 2 pi (1 + 4).
        let n = 512;
        let c = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
        let fr = c.frame().unwrap();
        let h = VectorField((0..n).map(|k| fr.n[k] * c.thetas()[k].sin()).collect());
        let g = metric_eval(MetricId::M4, &c, &h, &h).unwrap();
        assert!((g - TAU * 5.0).abs() < 50.0 * c.dtheta().powi(2), "{g}");
    }

    #[test]
    fn m4_fourier_symbol() {
        let n = 256;
        let c = DiscreteCurve::circle(n, 1.0, Vec2::zeros());
        for m in 1..5 {
            let h = VectorField::from_fn(n, true, |t| Vec2::new((m as f64 * t).cos(), 0.0));
            let p = momentum(MetricId::M4, &c, &h).unwrap();
            let val = p.pair(&h, c.dtheta());
            let mf = m as f64;
            let expected = (mf.powi(4) + mf * mf) * std::f64::consts::PI;
            assert!(val >= 0.0);
            assert!((val - expected).abs() < 1e-2 * expected, "{m}: {val} vs {expected}");
        }
    }

    #[test]
    fn hc_vanishes_on_zero_and_kernel() {
        let c = DiscreteCurve::circle(128, 1.0, Vec2::zeros());
        for id in MetricId::ALL {
            let z = hc_quadratic(id, &c, &VectorField::zeros(128)).unwrap();
            assert!(z.values().iter().all(|v| v.norm() == 0.0));
            for b in kernel_basis(id, &c) {
                let h = hc_quadratic(id, &c, &b).unwrap();
                assert!(h.values().iter().all(|v| v.norm() < 1e-8), "{id}");
            }
        }
    }

    #[test]
    fn hc_is_metric_derivative() {
        let n = 1024;
        let c = wobbly(n);
        let h = field(n, true, 0.7);
        let m = field(n, true, 2.2).scale(0.5);
        let eps = 1e-5;
        for id in MetricId::ALL {
            let hc = hc_quadratic(id, &c, &h).unwrap();
            let lhs = 2.0 * hc.pair(&m, c.dtheta());
            let gp = metric_eval(id, &c.perturbed(&m, eps).unwrap(), &h, &h).unwrap();
            let gm = metric_eval(id, &c.perturbed(&m, -eps).unwrap(), &h, &h).unwrap();
            let rhs = (gp - gm) / (2.0 * eps);
            assert!((lhs - rhs).abs() < 1e-4 * rhs.abs(), "{id}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn open_curves_rejected_by_operator() {
        let c = DiscreteCurve::from_fn(20, false, |t| Vec2::new(t, 0.1 * t * t)).unwrap();
        assert_eq!(apply_l(MetricId::M3, &c, &VectorField::zeros(20)).unwrap_err(), Error::OpenCurveUnsupported);
        assert!(metric_eval(MetricId::M3, &c, &VectorField::zeros(20), &VectorField::zeros(20)).is_ok());
    }

    #[test]
    fn m1_requires_convexity() {
        let c = DiscreteCurve::from_fn(64, true, |t| {
            let r = 1.0 + 0.5 * (3.0 * t).cos();
            Vec2::new(r * t.cos(), r * t.sin())
        })
        .unwrap();
        let h = VectorField::zeros(64);
        assert!(matches!(metric_eval(MetricId::M1, &c, &h, &h), Err(Error::NotConvex { .. })));
    }
}
