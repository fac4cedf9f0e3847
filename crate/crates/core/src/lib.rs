pub mod curve;
pub mod error;
pub mod fiber;
pub mod geodesic;
pub mod hamiltonian;
pub mod io;
pub mod linalg;
pub mod metric;
pub mod pointwise;
pub mod rtransform;
pub mod validate;

pub use curve::{DiscreteCurve, Vec2, VectorField};
pub use error::{Error, Result};
