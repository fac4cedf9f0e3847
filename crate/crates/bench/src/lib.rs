//! Shared inputs for the benchmarks.

use curveflow::{DiscreteCurve, Vec2, VectorField};

/// Closed star-shaped curve with a mild three-fold wobble.
pub fn wobbly_circle(n: usize) -> DiscreteCurve {
    DiscreteCurve::from_fn(n, true, |t| {
        let r = 1.0 + 0.05 * (3.0 * t).cos();
        Vec2::new(r * t.cos(), r * t.sin())
    })
    .expect("valid curve")
}

/// Open arc of the same shape, for the metrics that act on open curves.
pub fn wobbly_arc(n: usize, radius: f64) -> DiscreteCurve {
    DiscreteCurve::from_fn(n, false, |t| {
        let r = radius * (1.0 + 0.05 * (3.0 * t).cos());
        Vec2::new(r * t.cos(), r * t.sin())
    })
    .expect("valid curve")
}

/// Smooth velocity field with a few low modes.
pub fn field(n: usize, closed: bool) -> VectorField {
    VectorField::from_fn(n, closed, |t| Vec2::new(0.1 * (2.0 * t).sin(), 0.2 * t.cos()))
}
