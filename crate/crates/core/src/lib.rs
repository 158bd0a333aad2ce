//! Poincaré-ball geometry, a discrete rescaled Ricci-DeTurck flow, and a
//! flow-assisted hyperbolic embedding trainer for small dense networks.

pub mod datasets;
pub mod error;
pub mod eucl2hyp2eucl;
pub mod geometry;
pub mod linalg;
pub mod nn_engine;
pub mod ricci_flow;
pub mod tensor_calc;

pub use error::{Error, Result};
