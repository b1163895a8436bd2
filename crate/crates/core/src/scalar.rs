//! Floating-point scalar abstraction: everything runs at f32 or f64.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::AddAssign;

/// Element type for all numeric arrays in this crate.
///
/// f32 is the default experiment precision; f64 is used where tests compare
/// against finite differences and need a tight oracle.
pub trait Scalar:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Sum
    + AddAssign
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn cast(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 -> scalar")
    }
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    fn as_f64(self) -> f64 {
        self
    }
}

/// Runtime-selected precision, driven by the `REBASIN_PRECISION` env var.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn from_env() -> Result<Self, String> {
        match std::env::var("REBASIN_PRECISION") {
            Ok(s) => s.parse(),
            Err(_) => Ok(Precision::F32),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(format!("unknown precision {other:?}, expected f32 or f64")),
        }
    }
}
