//! Scalar abstraction for the global precision switch.
//!
//! Training runs in `f32`; gradient-check tests instantiate the same code in
//! `f64`. Checkpoints and datasets are always 32-bit on disk.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Real:
    Float + NumAssignOps + ScalarOperand + LinalgScalar + Sum + Display + Debug + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Shorthand for converting an `f64` literal into the active precision.
#[inline]
pub fn rr<R: Real>(x: f64) -> R {
    R::from_f64(x)
}
