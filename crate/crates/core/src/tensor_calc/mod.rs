//! Discrete differential geometry of grid-sampled metric fields.

mod field;
mod grid;
pub mod io;
mod ops;

pub use field::{ChristoffelField, CurvatureFields, Field, MetricField};
pub use grid::GridSpec;
pub use ops::{
    christoffel, covariant_derivative, curvature, deturck_vector, l2_distance_sq, lie_term, partials,
    ricci, riemann, riemann_lowered, scalar_curvature, second_partials, tensor_norm_sq,
};

pub(crate) use field::par_fill;
pub(crate) use ops::{
    christoffel_with, deturck_at, lie_at, norm_sq_at, ricci_at, second_partials_with,
};
