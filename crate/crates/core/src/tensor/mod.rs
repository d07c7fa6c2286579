//! Dense tensors and the reverse-mode autodiff tape.

pub(crate) mod conv;
mod dense;
mod element;
mod graph;
mod param;

pub use dense::Tensor;
pub use element::{DType, Element};
pub(crate) use graph::nearest_src;
pub use graph::{Activation, Graph, Mode, Var};
pub use param::{Param, ParamCell};
