//! Differentiation engine: nested forward-mode duals for the analytic game,
//! a dense reverse-mode tape for sequence policies, and a pivoting linear
//! solver that both kinds of numbers flow through.

pub mod dual;
pub mod forward;
pub mod linalg;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use dual::{Dual, NestedDual};
pub use forward::{
    grad_forward, grad_nested, gradcheck, gradient, hessian, relative_error, value_and_gradient,
    Differentiable,
};
pub use linalg::solve_linear;
pub use scalar::{dot, sigmoid, Scalar};
pub use tape::{grad_reverse, Eager, Ops, Tape, Var};
pub use tensor::{Float, Tensor};
