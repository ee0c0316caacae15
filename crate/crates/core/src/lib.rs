//! Online-learning feedback linearization for control-affine systems.
//!
//! The unknown dynamics `ẋ_n = f(x) + g(x) u` are identified in closed loop by
//! a Gaussian process with a compound kernel, the model is refreshed only when
//! an uncertainty-based trigger fires, and old data can be forgotten without
//! breaking the trigger condition.
//!
//! All numerics are generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision instantiation used by the CLI.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affine;
pub mod controller;
pub mod dd;
pub mod error;
pub mod gp;
pub mod hyperopt;
pub mod kernels;
pub mod linalg;
pub mod scalar;
pub mod simulator;
pub mod trigger;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Kernel64 = kernels::Kernel<f64>;
pub type Dataset64 = gp::Dataset<f64>;
pub type Posterior64 = gp::Posterior<f64>;
pub type AffineModel64 = affine::AffineModel<f64>;
pub type RunConfig64 = simulator::RunConfig<f64>;
pub type Trace64 = simulator::Trace<f64>;
pub type PlantSpec64 = simulator::PlantSpec<f64>;
