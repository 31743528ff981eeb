//! Dense `f64` arrays with define-by-run reverse-mode differentiation.

mod array;
mod check;
mod graph;
mod params;

pub use array::Array;
pub use check::{
    grad_check, grad_check_params, grad_check_params_with, numeric_derivative, numeric_derivative_terms, relative_error, GradCheckReport, Stencil,
    WorstEntry,
};
pub use graph::{Graph, NodeId, ACOS_EPS};
pub use params::{Param, ParamId, ParamKind, ParamStore};

#[allow(unused_imports)]
pub(crate) use graph::{clamp_acos, sigmoid, softmax};
