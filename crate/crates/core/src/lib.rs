//! Kernel classifiers with certified gradient-norm budgets.
//!
//! The crate trains kernel-expansion classifiers whose Lipschitz constant is
//! kept under an explicit budget via a low-rank bound on the gradient Gram
//! operator, evaluates them under projected-gradient attacks, and provides
//! exact oracles on discrete grids for the robust-risk / regularised-risk
//! identity that motivates the constraint.

pub mod attacks;
pub mod certify;
pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod lipbound;
pub mod report;
pub mod rng;
pub mod spectrum;
pub mod trainer;

pub use error::{Error, Result};
