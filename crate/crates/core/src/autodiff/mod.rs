//! Reverse-mode automatic differentiation on a dynamically recorded tape.
//!
//! Every quantity that participates in training (field weights, ODE
//! parameters, intermediate RK4 stages, rendered pixels, losses) is a [`Var`]
//! on a [`Tape`]. Forward values are computed eagerly when an op is recorded;
//! [`Tape::backward`] then walks the nodes in reverse recording order and
//! accumulates `d loss / d node` into every node that requires a gradient.
//!
//! Broadcasting is limited to scalar-versus-array for the element-wise ops.
//! Two structured exceptions exist for the dense layers of the fields:
//! [`Var::add_row`] (bias add) and [`Var::scale_rows`] (per-row scaling).

mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: input {value} outside the domain of the operation")]
    Domain { op: &'static str, value: f64 },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable belongs to a different tape")]
    ForeignTape,
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("non-finite function value {value} while probing parameter {param}[{index}]")]
    NonFinite {
        param: usize,
        index: usize,
        value: f64,
    },
    #[error("{0}")]
    Invalid(String),
}
