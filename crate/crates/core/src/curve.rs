//! Sampled plane curves, their frames and arc-length calculus.

use std::f64::consts::{PI, TAU};
use std::ops::{Add, Mul, Sub};

use nalgebra::Vector2;

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;

/// Rotation by a quarter turn, `J(x, y) = (-y, x)`.
#[inline]
pub fn rot90(p: Vec2) -> Vec2 {
    Vec2::new(-p.y, p.x)
}

#[inline]
pub fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Tunable thresholds for frame construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOptions {
    /// Minimum admissible `|c'|`.
    pub eps_reg: f64,
    /// Largest tangent rotation accepted between neighbouring samples.
    pub max_turn: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        FrameOptions { eps_reg: 1e-10, max_turn: PI / 2.0 }
    }
}

/// Uniformly sampled plane curve on `[0, 2pi]`.
///
/// Closed curves sample `theta_k = 2 pi k / N`; open curves include both
/// endpoints, `theta_k = 2 pi k / (N - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteCurve {
    points: Vec<Vec2>,
    closed: bool,
}

impl DiscreteCurve {
    pub fn new(points: Vec<Vec2>, closed: bool) -> Result<Self> {
        if points.len() < 8 {
            return Err(Error::TooFewSamples(points.len()));
        }
        if let Some(i) = points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::NonFinite(i));
        }
        Ok(DiscreteCurve { points, closed })
    }

    /// Samples `f` on the grid of an `n`-point curve.
    pub fn from_fn(n: usize, closed: bool, f: impl Fn(f64) -> Vec2) -> Result<Self> {
        let pts = theta_grid(n, closed).into_iter().map(f).collect();
        Self::new(pts, closed)
    }

    pub fn circle(n: usize, radius: f64, center: Vec2) -> Self {
        Self::from_fn(n, true, |t| center + radius * Vec2::new(t.cos(), t.sin()))
            .expect("valid circle")
    }

    pub fn ellipse(n: usize, a: f64, b: f64) -> Self {
        Self::from_fn(n, true, |t| Vec2::new(a * t.cos(), b * t.sin())).expect("valid ellipse")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Vec2> {
        self.points
    }

    pub fn dtheta(&self) -> f64 {
        grid_step(self.len(), self.closed)
    }

    pub fn thetas(&self) -> Vec<f64> {
        theta_grid(self.len(), self.closed)
    }

    pub fn frame(&self) -> Result<CurveFrame> {
        build_frame(self, FrameOptions::default())
    }

    pub fn translated(&self, d: Vec2) -> Self {
        DiscreteCurve { points: self.points.iter().map(|p| p + d).collect(), closed: self.closed }
    }

    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let points = self.points.iter().map(|p| Vec2::new(c * p.x - s * p.y, s * p.x + c * p.y)).collect();
        DiscreteCurve { points, closed: self.closed }
    }

    pub fn scaled(&self, r: f64) -> Self {
        DiscreteCurve { points: self.points.iter().map(|p| p * r).collect(), closed: self.closed }
    }

    /// `c + eps h`, used for perturbations and finite differences.
    pub fn perturbed(&self, h: &VectorField, eps: f64) -> Result<Self> {
        check_len(self.len(), h.len())?;
        Self::new(self.points.iter().zip(h.values()).map(|(p, v)| p + eps * v).collect(), self.closed)
    }
}

pub fn grid_step(n: usize, closed: bool) -> f64 {
    if closed {
        TAU / n as f64
    } else {
        TAU / (n as f64 - 1.0)
    }
}

pub fn theta_grid(n: usize, closed: bool) -> Vec<f64> {
    let d = grid_step(n, closed);
    (0..n).map(|k| k as f64 * d).collect()
}

/// Tangent vector field along a curve (one vector per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField(pub Vec<Vec2>);

impl VectorField {
    pub fn zeros(n: usize) -> Self {
        VectorField(vec![Vec2::zeros(); n])
    }

    pub fn constant(n: usize, v: Vec2) -> Self {
        VectorField(vec![v; n])
    }

    pub fn from_fn(n: usize, closed: bool, f: impl Fn(f64) -> Vec2) -> Self {
        VectorField(theta_grid(n, closed).into_iter().map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[Vec2] {
        &self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        VectorField(self.0.iter().map(|v| v * s).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        VectorField(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        VectorField(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// Pointwise multiplication by scalar samples.
    pub fn mul_scalars(&self, s: &[f64]) -> Self {
        VectorField(self.0.iter().zip(s).map(|(v, s)| v * *s).collect())
    }

    pub fn max_norm(&self) -> f64 {
        self.0.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::LengthMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Second-order derivative `d/dtheta` of samples on a uniform grid.
///
/// Periodic central differences when `closed`; otherwise central
/// differences inside and one-sided three-point stencils at the ends.
pub fn d_theta<T>(f: &[T], closed: bool, dtheta: f64) -> Vec<T>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    let n = f.len();
    let h = 0.5 / dtheta;
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let d = if closed {
            (f[(k + 1) % n] - f[(k + n - 1) % n]) * h
        } else if k == 0 {
            (f[1] * 4.0 - f[0] * 3.0 - f[2]) * h
        } else if k == n - 1 {
            (f[n - 1] * 3.0 - f[n - 2] * 4.0 + f[n - 3]) * h
        } else {
            (f[k + 1] - f[k - 1]) * h
        };
        out.push(d);
    }
    out
}

/// Second derivative on an open grid: central inside, one-sided
/// four-point (second order) at the ends.
fn d2_theta_open(f: &[Vec2], dtheta: f64) -> Vec<Vec2> {
    let n = f.len();
    let h = 1.0 / (dtheta * dtheta);
    (0..n)
        .map(|k| {
            if k == 0 {
                (f[0] * 2.0 - f[1] * 5.0 + f[2] * 4.0 - f[3]) * h
            } else if k == n - 1 {
                (f[n - 1] * 2.0 - f[n - 2] * 5.0 + f[n - 3] * 4.0 - f[n - 4]) * h
            } else {
                (f[k + 1] - f[k] * 2.0 + f[k - 1]) * h
            }
        })
        .collect()
}

/// Quadrature weights matching `integrate_ds`: periodic trapezoid for
/// closed grids, trapezoid with halved end weights for open ones.
pub fn quadrature_weights(n: usize, closed: bool) -> Vec<f64> {
    let d = grid_step(n, closed);
    let mut w = vec![d; n];
    if !closed {
        w[0] = 0.5 * d;
        w[n - 1] = 0.5 * d;
    }
    w
}

/// Cached per-sample geometry of a curve.
#[derive(Debug, Clone)]
pub struct CurveFrame {
    pub closed: bool,
    pub dtheta: f64,
    /// `|c'|`
    pub speed: Vec<f64>,
    pub v: Vec<Vec2>,
    pub n: Vec<Vec2>,
    pub kappa: Vec<f64>,
    /// Continuous lift of the turning angle, `alpha[0]` in `(-pi, pi]`.
    pub alpha: Vec<f64>,
    /// Tangent rotation from sample `k` to `k + 1` (wrapping for closed curves).
    pub turn: Vec<f64>,
    /// `c''` samples for open curves, empty for closed ones.
    pub ddc: Vec<Vec2>,
}

pub fn build_frame(c: &DiscreteCurve, opts: FrameOptions) -> Result<CurveFrame> {
    let n = c.len();
    let dt = c.dtheta();
    let dc = d_theta(c.points(), c.is_closed(), dt);
    let mut speed = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (index, d) in dc.iter().enumerate() {
        let s = d.norm();
        if !(s > opts.eps_reg) {
            return Err(Error::DegenerateCurve { index, speed: s });
        }
        speed.push(s);
        v.push(d / s);
    }
    let edges = if c.is_closed() { n } else { n - 1 };
    let mut turn = Vec::with_capacity(edges);
    for k in 0..edges {
        let next = (k + 1) % n;
        let inc = cross(v[k], v[next]).atan2(v[k].dot(&v[next]));
        if inc.abs() > opts.max_turn {
            return Err(Error::TurningTooFast { index: k, next, increment: inc });
        }
        turn.push(inc);
    }
    let mut alpha = Vec::with_capacity(n);
    let mut a = wrap_angle(v[0].y.atan2(v[0].x));
    alpha.push(a);
    for t in turn.iter().take(n - 1) {
        a += t;
        alpha.push(a);
    }
    // Open curves: differencing the lifted angle would nest the one-sided
    // stencils at the ends and lose an order there, so use c'' directly.
    let (kappa, ddc) = if c.is_closed() {
        ((0..n).map(|k| (turn[(k + n - 1) % n] + turn[k]) / (2.0 * dt * speed[k])).collect(), Vec::new())
    } else {
        let ddc = d2_theta_open(c.points(), dt);
        ((0..n).map(|k| cross(dc[k], ddc[k]) / speed[k].powi(3)).collect(), ddc)
    };
    let nrm = v.iter().map(|&t| rot90(t)).collect();
    Ok(CurveFrame { closed: c.is_closed(), dtheta: dt, speed, v, n: nrm, kappa, alpha, turn, ddc })
}

/// Frame components of the first two arc-length derivatives of a field:
/// `D_s h = a v + b n` and `D_s^2 h = e v + f n`.
///
/// The second derivative is assembled from the frame equations
/// `D_s v = kappa n`, `D_s n = -kappa v`. On open curves `f` is instead the
/// exact variation of the discrete curvature, so quantities built from `f`
/// linearise the discrete frame exactly in both cases.
#[derive(Debug, Clone)]
pub struct FieldJet {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub e: Vec<f64>,
    pub f: Vec<f64>,
}

impl CurveFrame {
    pub fn len(&self) -> usize {
        self.speed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        quadrature_weights(self.len(), self.closed)
    }

    pub fn d_theta<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
    {
        d_theta(f, self.closed, self.dtheta)
    }

    /// Arc-length derivative `f' / |c'|`.
    pub fn ds<T>(&self, f: &[T]) -> Vec<T>
    where
        T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
    {
        self.d_theta(f).into_iter().zip(&self.speed).map(|(d, s)| d * (1.0 / s)).collect()
    }

    /// `\int f ds`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.speed).zip(self.weights()).map(|((f, s), w)| f * s * w).sum()
    }

    pub fn length(&self) -> f64 {
        self.speed.iter().zip(self.weights()).map(|(s, w)| s * w).sum()
    }

    /// Number of full turns of the tangent (closed curves).
    pub fn winding(&self) -> f64 {
        self.turn.iter().sum::<f64>() / TAU
    }

    pub fn jet(&self, h: &VectorField) -> Result<FieldJet> {
        check_len(self.len(), h.len())?;
        let dsh = self.ds(h.values());
        let a: Vec<f64> = dsh.iter().zip(&self.v).map(|(d, v)| d.dot(v)).collect();
        let b: Vec<f64> = dsh.iter().zip(&self.n).map(|(d, n)| d.dot(n)).collect();
        let dsa = self.ds(&a);
        let dsb = self.ds(&b);
        let e = (0..self.len()).map(|k| dsa[k] - self.kappa[k] * b[k]).collect();
        let f = if self.closed {
            (0..self.len()).map(|k| dsb[k] + self.kappa[k] * a[k]).collect()
        } else {
            // f = delta kappa + 2 a kappa, with delta kappa the exact
            // variation of cross(c', c'') / |c'|^3.
            let dh = self.d_theta(h.values());
            let ddh = d2_theta_open(h.values(), self.dtheta);
            (0..self.len())
                .map(|k| {
                    let (s, dc) = (self.speed[k], self.v[k] * self.speed[k]);
                    (cross(dh[k], self.ddc[k]) + cross(dc, ddh[k])) / s.powi(3) - self.kappa[k] * a[k]
                })
                .collect()
        };
        Ok(FieldJet { a, b, e, f })
    }
}

pub fn ds_derivative<T>(c: &DiscreteCurve, f: &[T]) -> Result<Vec<T>>
where
    T: Copy + Add<Output = T> + Sub<Output = T> + Mul<f64, Output = T>,
{
    check_len(c.len(), f.len())?;
    Ok(c.frame()?.ds(f))
}

pub fn integrate_ds(c: &DiscreteCurve, f: &[f64]) -> Result<f64> {
    check_len(c.len(), f.len())?;
    Ok(c.frame()?.integrate(f))
}

/// Frame quantity selector for [`first_variation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameQuantity {
    Alpha,
    V,
    N,
    Speed,
    Kappa,
}

/// Result of a first variation: scalar or vector samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Variation {
    Scalar(Vec<f64>),
    Vector(Vec<Vec2>),
}

impl Variation {
    pub fn max_abs(&self) -> f64 {
        match self {
            Variation::Scalar(s) => s.iter().map(|x| x.abs()).fold(0.0, f64::max),
            Variation::Vector(v) => v.iter().map(|x| x.norm()).fold(0.0, f64::max),
        }
    }
}

/// Analytic first variation of a frame quantity in direction `h`:
/// `d|c'| = <D_s h, v>|c'|`, `dv = <D_s h, n> n`, `dn = -<D_s h, n> v`,
/// `dalpha = <D_s h, n>`, `dkappa = <D_s^2 h, n> - 2 kappa <D_s h, v>`.
pub fn first_variation(c: &DiscreteCurve, h: &VectorField, quantity: FrameQuantity) -> Result<Variation> {
    let fr = c.frame()?;
    let j = fr.jet(h)?;
    let n = fr.len();
    Ok(match quantity {
        FrameQuantity::Alpha => Variation::Scalar(j.b),
        FrameQuantity::Speed => Variation::Scalar((0..n).map(|k| j.a[k] * fr.speed[k]).collect()),
        FrameQuantity::Kappa => Variation::Scalar((0..n).map(|k| j.f[k] - 2.0 * fr.kappa[k] * j.a[k]).collect()),
        FrameQuantity::V => Variation::Vector((0..n).map(|k| fr.n[k] * j.b[k]).collect()),
        FrameQuantity::N => Variation::Vector((0..n).map(|k| -fr.v[k] * j.b[k]).collect()),
    })
}

/// Translates the curve so that `\int c ds = 0`.
pub fn center(c: &DiscreteCurve) -> Result<DiscreteCurve> {
    let fr = c.frame()?;
    let w = fr.weights();
    let mut m = Vec2::zeros();
    let mut len = 0.0;
    for k in 0..c.len() {
        m += c.points()[k] * (fr.speed[k] * w[k]);
        len += fr.speed[k] * w[k];
    }
    Ok(c.translated(-m / len))
}

/// Centers the curve and rotates it so that `\int alpha ds = 0`.
pub fn normalize_motion(c: &DiscreteCurve) -> Result<DiscreteCurve> {
    let centered = center(c)?;
    let fr = centered.frame()?;
    let mean = fr.integrate(&fr.alpha) / fr.length();
    let rotated = centered.rotated(-mean);
    // Re-wrapping alpha(0) may shift the new lift by a multiple of 2 pi.
    Ok(rotated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sup(a: &[f64], b: impl Fn(usize) -> f64) -> f64 {
        a.iter().enumerate().map(|(k, x)| (x - b(k)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn circle_frame() {
        let c = DiscreteCurve::circle(128, 1.0, Vec2::zeros());
        let fr = c.frame().unwrap();
        let th = c.thetas();
        let dt2 = c.dtheta().powi(2);
        assert!(sup(&fr.kappa, |_| 1.0) < dt2);
        assert!(sup(&fr.speed, |_| 1.0) < dt2);
        assert!(sup(&fr.alpha, |k| th[k] + PI / 2.0) < 1e-12);
        for k in 0..c.len() {
            assert!((fr.v[k] - Vec2::new(-th[k].sin(), th[k].cos())).norm() < 1e-12);
            assert!((fr.n[k] - Vec2::new(-th[k].cos(), -th[k].sin())).norm() < 1e-12);
            assert!((fr.v[k].norm() - 1.0).abs() < 1e-12);
            assert!(fr.v[k].dot(&fr.n[k]).abs() < 1e-12);
        }
        assert_relative_eq!(fr.winding(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn segment_frame() {
        let c = DiscreteCurve::from_fn(33, false, |t| Vec2::new(t, 0.0)).unwrap();
        let fr = c.frame().unwrap();
        assert!(sup(&fr.kappa, |_| 0.0) < 1e-12);
        assert!(sup(&fr.alpha, |_| 0.0) < 1e-12);
        assert!(sup(&fr.speed, |_| 1.0) < 1e-12);
        assert!(fr.n.iter().all(|n| (n - Vec2::new(0.0, 1.0)).norm() < 1e-12));
    }

    #[test]
    fn ellipse_curvature_converges() {
        let exact = |t: f64| 2.0 / (4.0 * t.sin().powi(2) + t.cos().powi(2)).powf(1.5);
        let err = |n: usize| {
            let c = DiscreteCurve::ellipse(n, 2.0, 1.0);
            let th = c.thetas();
            sup(&c.frame().unwrap().kappa, |k| exact(th[k]))
        };
        let c = DiscreteCurve::ellipse(256, 2.0, 1.0);
        let fr = c.frame().unwrap();
        assert!((fr.kappa[0] - 2.0).abs() < 1e-2);
        assert!((fr.kappa[64] - 0.25).abs() < 1e-3);
        let ratio = err(128) / err(256);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn frenet_on_circle() {
        let c = DiscreteCurve::circle(128, 1.0, Vec2::zeros());
        let fr = c.frame().unwrap();
        let dsv = fr.ds(&fr.v);
        let dsn = fr.ds(&fr.n);
        let dt2 = c.dtheta().powi(2);
        for k in 0..c.len() {
            assert!((dsv[k] - fr.n[k]).norm() < dt2);
            assert!((dsn[k] + fr.v[k]).norm() < dt2);
        }
    }

    #[test]
    fn open_derivative() {
        let c = DiscreteCurve::from_fn(101, false, |t| Vec2::new(2.0 * t, 0.0)).unwrap();
        let th = c.thetas();
        let f: Vec<f64> = th.iter().map(|t| t.sin()).collect();
        let d = ds_derivative(&c, &f).unwrap();
        assert!(sup(&d, |k| th[k].cos() / 2.0) < c.dtheta().powi(2));
    }

    #[test]
    fn lengths_and_turning() {
        let c = DiscreteCurve::circle(64, 1.0, Vec2::zeros());
        let one = vec![1.0; 64];
        // the central stencil gives |c'| = sin(dt)/dt on the unit circle
        let dt = c.dtheta();
        assert_relative_eq!(integrate_ds(&c, &one).unwrap(), TAU * dt.sin() / dt, epsilon = 1e-12);
        let c3 = DiscreteCurve::circle(400, 3.0, Vec2::new(1.0, 2.0));
        let fr = c3.frame().unwrap();
        assert!((fr.length() - TAU * 3.0).abs() < 3.0 * TAU * c3.dtheta().powi(2));
        let e = DiscreteCurve::ellipse(200, 3.0, 1.0);
        let fe = e.frame().unwrap();
        assert!((fe.integrate(&fe.kappa) - TAU).abs() < 10.0 * e.dtheta().powi(2));
    }

    #[test]
    fn scaling_variation() {
        let c = DiscreteCurve::circle(128, 1.0, Vec2::zeros());
        let h = VectorField(c.points().to_vec());
        let fr = c.frame().unwrap();
        let Variation::Scalar(ds) = first_variation(&c, &h, FrameQuantity::Speed).unwrap() else {
            unreachable!()
        };
        let Variation::Scalar(dk) = first_variation(&c, &h, FrameQuantity::Kappa).unwrap() else {
            unreachable!()
        };
        for k in 0..c.len() {
            assert!((ds[k] - fr.speed[k]).abs() < 1e-12);
            assert!((dk[k] + fr.kappa[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn translation_has_no_variation() {
        let c = DiscreteCurve::ellipse(64, 2.0, 1.0);
        let h = VectorField::constant(64, Vec2::new(0.3, -1.2));
        for q in [FrameQuantity::Alpha, FrameQuantity::V, FrameQuantity::N, FrameQuantity::Speed, FrameQuantity::Kappa] {
            assert!(first_variation(&c, &h, q).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn centering() {
        let c = DiscreteCurve::circle(64, 1.0, Vec2::new(5.0, 5.0));
        let cc = center(&c).unwrap();
        assert!(cc.points().iter().all(|p| (p.norm() - 1.0).abs() < 1e-12));
        let again = center(&cc).unwrap();
        for (a, b) in again.points().iter().zip(cc.points()) {
            assert!((a - b).norm() < 1e-14);
        }
        let e = DiscreteCurve::ellipse(64, 2.0, 1.0).translated(Vec2::new(1.0, -2.0));
        let ec = center(&e).unwrap();
        let fr = ec.frame().unwrap();
        let mx = fr.integrate(&ec.points().iter().map(|p| p.x).collect::<Vec<_>>());
        let my = fr.integrate(&ec.points().iter().map(|p| p.y).collect::<Vec<_>>());
        assert!(mx.abs() < 1e-12 && my.abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(DiscreteCurve::new(vec![Vec2::zeros(); 4], true), Err(Error::TooFewSamples(4))));
        let flat = DiscreteCurve::new(vec![Vec2::zeros(); 10], true).unwrap();
        assert!(matches!(flat.frame(), Err(Error::DegenerateCurve { .. })));
        let zigzag = DiscreteCurve::from_fn(12, true, |t| Vec2::new((4.0 * t).cos(), (4.0 * t).sin())).unwrap();
        assert!(matches!(zigzag.frame(), Err(Error::TurningTooFast { .. })));
    }
}
