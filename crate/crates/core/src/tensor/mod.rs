//! Minimal reverse-mode differentiation over dense `f64` tensors.

mod adam;
mod graph;
pub mod kernels;
mod params;
mod value;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use params::{Bound, ParamSet};
pub use value::Tensor;
