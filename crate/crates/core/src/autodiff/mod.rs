//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles together with
//! a backward rule. [`Tape::backward`] walks the record in reverse creation
//! order and accumulates gradients into differentiable leaves. Values are
//! `f64` throughout so finite-difference checks stay meaningful.

pub mod checkpoint;
mod gradcheck;
mod ops;
mod param;
mod spatial;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, grad_check_params, GradCheckReport};
pub use param::{poly_lr, sgd_step, uniform_fan_in, Binding, ParamGroup, ParamId, ParamStore, Parameter, SgdConfig};
pub use spatial::{reflect_pad_bottom_right, ConvSpec};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
