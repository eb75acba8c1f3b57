//! Reverse-mode automatic differentiation over dense `f64` tensors.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::{finite_difference_check, finite_difference_check_with, GradCheck, MAX_COORDS_PER_LEAF};
pub use graph::{AngularMargin, Bindings, Gradients, Graph, NodeId, Op, Trace};
pub use params::{sgd_update, sgd_update_subset, Init, Initializer, LrSchedule, ParamStore};
pub use tensor::Tensor;
