//! Minimal `f64` tensor algebra with reverse-mode differentiation.

mod graph;
mod mat;
mod params;

pub use graph::{gelu, sigmoid, softplus, Grads, Graph, Var};
pub use mat::Mat;
pub use params::{ParamId, ParamStore};
