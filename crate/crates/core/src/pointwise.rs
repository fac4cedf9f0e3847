//! The half plane `(x > 0, y)` with `g = 4 dx^2 + x^-6 dy^2`: the fibre of
//! the M2 transform. Geodesics have the first integral `y' = C1 x^6`, so
//! trajectories are explicit in terms of
//!
//! ```text
//! F(u) = int_0^u z^6 / sqrt(1 - z^6) dz,   G(u) = int_0^u 1 / sqrt(1 - z^6) dz.
//! ```
//!
//! `F` gives `y(x)`, `G` gives the time (arclength) along the trajectory.

use crate::curve::{DiscreteCurve, VectorField};
use crate::error::{Error, Result};
use crate::metric::MetricId;
use crate::rtransform::{dr_frame, rpoint_inner, RPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent2 {
    pub dx: f64,
    pub dy: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }
}

impl Tangent2 {
    pub fn new(dx: f64, dy: f64) -> Self {
        Tangent2 { dx, dy }
    }
}

fn check_x(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::DomainExit { exit_time: f64::NAN })
    }
}

/// `g_p(v, w)`.
pub fn g2(p: Point2, v: Tangent2, w: Tangent2) -> f64 {
    4.0 * v.dx * w.dx + p.x.powi(-6) * v.dy * w.dy
}

/// Geodesic accelerations `(x'', y'')`.
pub fn spray2(p: Point2, v: Tangent2) -> Result<Tangent2> {
    check_x(p.x)?;
    Ok(Tangent2 { dx: -0.75 * p.x.powi(-7) * v.dy * v.dy, dy: 6.0 * v.dx * v.dy / p.x })
}

/// Classical RK4 for the geodesic spray; returns `steps + 1` states.
pub fn integrate_spray2(p: Point2, v: Tangent2, dt: f64, steps: usize) -> Result<Vec<(Point2, Tangent2)>> {
    let f = |s: [f64; 4]| -> Result<[f64; 4]> {
        let a = spray2(Point2::new(s[0], s[1]), Tangent2::new(s[2], s[3]))?;
        Ok([s[2], s[3], a.dx, a.dy])
    };
    let mut s = [p.x, p.y, v.dx, v.dy];
    let mut out = Vec::with_capacity(steps + 1);
    out.push((p, v));
    for i in 0..steps {
        let exit = |_| Error::DomainExit { exit_time: i as f64 * dt };
        let k1 = f(s).map_err(exit)?;
        let k2 = f(std::array::from_fn(|j| s[j] + 0.5 * dt * k1[j])).map_err(exit)?;
        let k3 = f(std::array::from_fn(|j| s[j] + 0.5 * dt * k2[j])).map_err(exit)?;
        let k4 = f(std::array::from_fn(|j| s[j] + dt * k3[j])).map_err(exit)?;
        s = std::array::from_fn(|j| s[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]));
        if !(s[0] > 0.0) {
            return Err(Error::DomainExit { exit_time: (i + 1) as f64 * dt });
        }
        out.push((Point2::new(s[0], s[1]), Tangent2::new(s[2], s[3])));
    }
    Ok(out)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `sqrt((1 - z^6) / (1 - z))` written as a polynomial so it stays smooth at `z = 1`.
fn sqrt_p(z: f64) -> f64 {
    (1.0 + z * (1.0 + z * (1.0 + z * (1.0 + z * (1.0 + z))))).sqrt()
}

/// After `z = 1 - w^2` both integrals are smooth on `w in [sqrt(1-u), 1]`.
fn fg_integral(u: f64, power: i32) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::OutOfRange { value: u, lo: 0.0, hi: 1.0 });
    }
    let f = |w: f64| {
        let z = 1.0 - w * w;
        2.0 * z.powi(power) / sqrt_p(z)
    };
    Ok(adaptive_simpson(&f, (1.0 - u).sqrt(), 1.0, 1e-14))
}

/// `F(u) = int_0^u z^6 / sqrt(1 - z^6) dz`.
pub fn f_integral(u: f64) -> Result<f64> {
    fg_integral(u, 6)
}

/// `G(u) = int_0^u dz / sqrt(1 - z^6)`.
pub fn g_integral(u: f64) -> Result<f64> {
    fg_integral(u, 0)
}

/// `A = F(1)`.
pub fn constant_a() -> f64 {
    f_integral(1.0).expect("1 is in range")
}

fn f_prime(u: f64) -> f64 {
    u.powi(6) / (1.0 - u.powi(6)).sqrt()
}

/// Solves `G(z) = target` for `z in [0, 1]`, working in `w = sqrt(1 - z)`.
fn invert_g(target: f64, g1: f64) -> f64 {
    if target <= 0.0 {
        return 0.0;
    }
    if target >= g1 {
        return 1.0;
    }
    let gw = |w: f64| g_integral(1.0 - w * w).expect("in range");
    // G decreasing in w.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut w = (1.0 - target.min(1.0)).sqrt().clamp(0.0, 1.0);
    for _ in 0..100 {
        let r = gw(w) - target;
        if r.abs() < 1e-15 {
            break;
        }
        if r > 0.0 {
            lo = w;
        } else {
            hi = w;
        }
        let z = 1.0 - w * w;
        let slope = -2.0 / sqrt_p(z);
        let mut next = w - r / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() < 1e-16 {
            w = next;
            break;
        }
        w = next;
    }
    1.0 - w * w
}

/// Explicit trajectory of a geodesic through `p0` with velocity `v0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory2 {
    /// `y' = 0`: the straight ray `(x0 + t x0', y0)`, incomplete when `x0' < 0`.
    Ray { p0: Point2, v0: Tangent2 },
    /// `C^3 = C1 / sqrt(E)` with `C1 = y'/x^6`, `E` the squared g-speed;
    /// the apex sits at `x = 1/|C|`.
    Arc { p0: Point2, v0: Tangent2, c: f64 },
}

/// Trajectory data for the geodesic with initial data `(p0, v0)`.
pub fn trajectory2(p0: Point2, v0: Tangent2) -> Result<Trajectory2> {
    check_x(p0.x)?;
    if v0.dy == 0.0 {
        return Ok(Trajectory2::Ray { p0, v0 });
    }
    let energy = g2(p0, v0, v0);
    let c1 = v0.dy / p0.x.powi(6);
    Ok(Trajectory2::Arc { p0, v0, c: (c1 / energy.sqrt()).cbrt() })
}

impl Trajectory2 {
    /// `|C|`, zero for rays.
    pub fn c_abs(&self) -> f64 {
        match self {
            Trajectory2::Ray { .. } => 0.0,
            Trajectory2::Arc { c, .. } => c.abs(),
        }
    }

    /// Apex `(1/|C|, y)` when the motion heads towards it.
    pub fn apex(&self) -> Option<Point2> {
        match *self {
            Trajectory2::Ray { .. } => None,
            Trajectory2::Arc { p0, v0, c } => {
                if v0.dx < 0.0 {
                    return None;
                }
                let ca = c.abs();
                let dy = 2.0 / ca.powi(4) * (constant_a() - f_integral((ca * p0.x).min(1.0)).ok()?);
                Some(Point2::new(1.0 / ca, p0.y + c.signum() * dy))
            }
        }
    }

    /// `y` at abscissa `x` on the branch through `p0` (`descending = false`)
    /// or on the reflected branch after the apex.
    pub fn y_at(&self, x: f64, descending: bool) -> Result<f64> {
        match *self {
            Trajectory2::Ray { p0, .. } => Ok(p0.y),
            Trajectory2::Arc { p0, v0, c } => {
                let ca = c.abs();
                let z = ca * x;
                let z0 = (ca * p0.x).min(1.0);
                if !descending {
                    let sign = (v0.dy / v0.dx).signum();
                    let sign = if v0.dx == 0.0 { -v0.dy.signum() } else { sign };
                    Ok(p0.y + sign * 2.0 / ca.powi(4) * (f_integral(z)? - f_integral(z0)?))
                } else {
                    let apex = self.apex().ok_or(Error::OutOfRange { value: x, lo: 0.0, hi: 1.0 / ca })?;
                    Ok(apex.y + c.signum() * 2.0 / ca.powi(4) * (constant_a() - f_integral(z)?))
                }
            }
        }
    }
}

/// Time-sampled geodesic in the half plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Geodesic2 {
    pub points: Vec<Point2>,
    /// Time derivatives at the sample points.
    pub velocities: Vec<Tangent2>,
    /// g-length, equal to the constant g-speed over unit time.
    pub length: f64,
}

/// Normalised problem: `x0 <= x1`, `y0 <= y1`, `y0 = 0`.
struct Canon {
    swap: bool,
    flip: bool,
    y0: f64,
    x0: f64,
    x1: f64,
    dy: f64,
}

fn canon(p0: Point2, p1: Point2) -> Canon {
    let swap = p0.x > p1.x;
    let (a, b) = if swap { (p1, p0) } else { (p0, p1) };
    let flip = b.y < a.y;
    Canon { swap, flip, y0: a.y, x0: a.x, x1: b.x, dy: (b.y - a.y).abs() }
}

/// Geometry of a canonical arc: apex parameter and case.
enum Shape {
    Constant,
    Ray,
    /// Ascending only.
    Rising { c: f64 },
    /// Ascending to the apex `1/c`, then descending.
    Turning { c: f64 },
}

fn f_case1(x0: f64, x1: f64, c: f64) -> f64 {
    2.0 / c.powi(4) * (f_integral(c * x1).unwrap() - f_integral(c * x0).unwrap())
}

/// Bisection to a loose bracket, then safeguarded Newton.
fn monotone_root(f: &dyn Fn(f64) -> f64, df: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, increasing: bool) -> Result<f64> {
    let sgn = if increasing { 1.0 } else { -1.0 };
    let mut it = 0;
    while (hi - lo) > 1e-3 * hi.abs().max(1e-300) && it < 200 {
        let m = 0.5 * (lo + hi);
        if sgn * f(m) > 0.0 {
            hi = m;
        } else {
            lo = m;
        }
        it += 1;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let r = f(x);
        if sgn * r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = df(x);
        let mut next = x - r / d;
        if !(next > lo && next < hi) || !d.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.abs() || hi - lo <= 1e-15 * hi.abs() {
            return Ok(next);
        }
        x = next;
    }
    let r = f(x);
    if r.abs() < 1e-12 {
        Ok(x)
    } else {
        Err(Error::NoConvergence { iterations: 300, residual: r })
    }
}

fn shape(cn: &Canon) -> Result<Shape> {
    let (x0, x1, dy) = (cn.x0, cn.x1, cn.dy);
    if dy == 0.0 {
        return Ok(if x0 == x1 { Shape::Constant } else { Shape::Ray });
    }
    let a = constant_a();
    let threshold = 2.0 * x1.powi(4) * (a - f_integral(x0 / x1)?);
    if dy <= threshold * (1.0 + 1e-12) && x0 < x1 {
        if dy >= threshold {
            return Ok(Shape::Rising { c: 1.0 / x1 });
        }
        // Solve in c; the map is increasing on (0, 1/x1].
        let f = |c: f64| f_case1(x0, x1, c) - dy;
        let df = |c: f64| {
            let (z0, z1) = (c * x0, c * x1);
            -4.0 / c * f_case1(x0, x1, c) + 2.0 / c.powi(4) * (x1 * f_prime(z1) - x0 * f_prime(z0))
        };
        // Small-c regime: f ~ 2 c^3 (x1^7 - x0^7) / 7 gives a lower bracket.
        let mut lo = (3.5 * dy / (x1.powi(7) - x0.powi(7))).cbrt().min(1.0 / x1) * 0.5;
        while f(lo) > 0.0 {
            lo *= 0.5;
        }
        let c = monotone_root(&f, &df, lo, 1.0 / x1, true)?;
        return Ok(Shape::Rising { c });
    }
    // Turning branch, solved for u = 1/xbar in (0, 1/x1]; increasing in... decreasing in u.
    let h = |u: f64| 2.0 / u.powi(4) * (2.0 * a - f_integral(u * x0).unwrap() - f_integral(u * x1).unwrap()) - dy;
    let dh = |u: f64| {
        let (z0, z1) = (u * x0, u * x1);
        -4.0 / u * (h(u) + dy) - 2.0 / u.powi(4) * (x0 * f_prime(z0) + x1 * f_prime(z1))
    };
    let hi = 1.0 / x1;
    let mut lo = hi * 0.5;
    while h(lo) < 0.0 {
        lo *= 0.5;
    }
    let u = monotone_root(&h, &dh, lo, hi, false)?;
    Ok(Shape::Turning { c: u })
}

/// Unique geodesic from `p0` (t = 0) to `p1` (t = 1), sampled at `k` uniform times.
pub fn bvp2(p0: Point2, p1: Point2, k: usize) -> Result<Geodesic2> {
    check_x(p0.x)?;
    check_x(p1.x)?;
    let k = k.max(2);
    let cn = canon(p0, p1);
    let sh = shape(&cn)?;
    let times: Vec<f64> = (0..k).map(|j| j as f64 / (k - 1) as f64).collect();
    let mut vels = vec![Tangent2::new(0.0, 0.0); k];
    let (mut pts, length): (Vec<Point2>, f64) = match sh {
        Shape::Constant => (vec![Point2::new(cn.x0, 0.0); k], 0.0),
        Shape::Ray => {
            vels.iter_mut().for_each(|v| v.dx = cn.x1 - cn.x0);
            (times.iter().map(|t| Point2::new(cn.x0 + t * (cn.x1 - cn.x0), 0.0)).collect(), 2.0 * (cn.x1 - cn.x0))
        }
        Shape::Rising { c } | Shape::Turning { c } => {
            let turning = matches!(sh, Shape::Turning { .. });
            let (z0, z1) = ((c * cn.x0).min(1.0), (c * cn.x1).min(1.0));
            let (g0, g1, gone) = (g_integral(z0)?, g_integral(z1)?, g_integral(1.0)?);
            let (f0, fone) = (f_integral(z0)?, constant_a());
            // g-arclength in units of 2/c.
            let span = if turning { 2.0 * gone - g0 - g1 } else { g1 - g0 };
            let scale = 2.0 / c.powi(4);
            let len = 2.0 / c * span;
            let mut pts = Vec::with_capacity(k);
            for (j, &t) in times.iter().enumerate() {
                let s = g0 + t * span;
                let (p, z, up) = if s <= gone || !turning {
                    let z = invert_g(s, gone);
                    (Point2::new(z / c, scale * (f_integral(z)? - f0)), z, true)
                } else {
                    let z = invert_g(2.0 * gone - s, gone);
                    (Point2::new(z / c, scale * (2.0 * fone - f0 - f_integral(z)?)), z, false)
                };
                // First integrals: y' = L z^6 / c^3, 4 x'^2 + y'^2 / x^6 = L^2.
                let dx = 0.5 * len * (1.0 - z.powi(6)).max(0.0).sqrt();
                vels[j] = Tangent2::new(if up { dx } else { -dx }, len * z.powi(6) / c.powi(3));
                pts.push(p);
            }
            (pts, len)
        }
    };
    // Exact endpoints.
    pts[0] = Point2::new(cn.x0, 0.0);
    pts[k - 1] = Point2::new(cn.x1, cn.dy);
    for p in pts.iter_mut() {
        p.y = cn.y0 + if cn.flip { -p.y } else { p.y };
    }
    if cn.flip {
        vels.iter_mut().for_each(|v| v.dy = -v.dy);
    }
    if cn.swap {
        pts.reverse();
        vels.reverse();
        vels.iter_mut().for_each(|v| *v = Tangent2::new(-v.dx, -v.dy));
    }
    Ok(Geodesic2 { points: pts, velocities: vels, length })
}

/// g-length of the geodesic between two points.
pub fn dist2(p0: Point2, p1: Point2) -> Result<f64> {
    Ok(bvp2(p0, p1, 2)?.length)
}

/// Gauss curvature `-3/x^2` (the scalar curvature of the fibre as labelled in the analysis).
pub fn scal2(p: Point2) -> Result<f64> {
    check_x(p.x)?;
    Ok(-3.0 / (p.x * p.x))
}

/// `R(h, k) l = K (g(k, l) h - g(h, l) k)`.
pub fn curvature_tensor2(p: Point2, h: Tangent2, k: Tangent2, l: Tangent2) -> Result<Tangent2> {
    let kk = scal2(p)?;
    let (a, b) = (g2(p, k, l), g2(p, h, l));
    Ok(Tangent2::new(kk * (a * h.dx - b * k.dx), kk * (a * h.dy - b * k.dy)))
}

/// `g(R(h, k) k, h) = -12 x^-8 (h1 k2 - h2 k1)^2`.
pub fn curvature_numerator2(p: Point2, h: Tangent2, k: Tangent2) -> Result<f64> {
    check_x(p.x)?;
    let det = h.dx * k.dy - h.dy * k.dx;
    Ok(-12.0 * p.x.powi(-8) * det * det)
}

fn lower_bound_with(p0: Point2, p1: Point2, factor: f64) -> f64 {
    let dx = p0.x - p1.x;
    let dy = (p0.y - p1.y).abs();
    let den = factor * (p0.x.powi(4) + p1.x.powi(4) + dy / (2.0 * constant_a())).powf(1.5);
    2.0 * (dx * dx + dy * dy / den).sqrt()
}

/// Published lower bound on the fibre distance, with the factor `2^{1/8}`.
///
/// Not a valid bound: for nearby points at equal `x` it tends to
/// `2^{-1/16} |dy| / x^3`, above the true distance `|dy| / x^3`.
/// See [`dist2_lower_bound_corrected`].
pub fn dist2_lower_bound(p0: Point2, p1: Point2) -> f64 {
    lower_bound_with(p0, p1, 2f64.powf(0.125))
}

/// The same bound with the factor `2^{1/2}`; sharp to first order for
/// nearby points.
pub fn dist2_lower_bound_corrected(p0: Point2, p1: Point2) -> f64 {
    lower_bound_with(p0, p1, 2f64.sqrt())
}

/// Sectional curvature of the M2 metric on open curves, through the
/// pointwise curvature of the fibre.
pub fn sectional_curvature_m2(c: &DiscreteCurve, h: &VectorField, k: &VectorField) -> Result<f64> {
    if c.is_closed() {
        return Err(Error::ClosednessMismatch);
    }
    let fr = c.frame()?;
    let dh = dr_frame(MetricId::M2, &fr, h)?;
    let dk = dr_frame(MetricId::M2, &fr, k)?;
    let n = fr.len();
    // Only q1 enters the fibre metric.
    let q = RPoint { metric: MetricId::M2, closed: false, q: fr.speed.iter().flat_map(|s| [s.sqrt(), 0.0]).collect() };
    let ghh = rpoint_inner(&q, &dh, &dh);
    let gkk = rpoint_inner(&q, &dk, &dk);
    let ghk = rpoint_inner(&q, &dh, &dk);
    let gram = ghh * gkk - ghk * ghk;
    if !(gram > 1e-12 * ghh * gkk) || gram <= 0.0 {
        return Err(Error::DegeneratePlane { gram });
    }
    let w = q.weights();
    let mut num = 0.0;
    for j in 0..n {
        let p = Point2::new(q.q[2 * j], 0.0);
        num += w[j] * curvature_numerator2(p, Tangent2::new(dh[2 * j], dh[2 * j + 1]), Tangent2::new(dk[2 * j], dk[2 * j + 1]))?;
    }
    Ok(num / gram)
}
