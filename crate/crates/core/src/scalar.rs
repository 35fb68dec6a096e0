//! Scalar abstraction shared by every numerical routine in the crate.
//!
//! All algorithms are written against [`Real`], which is implemented for
//! `f32` and `f64`. Tolerances quoted in the documentation assume `f64`;
//! single precision works for simulation and data handling but the interior
//! point solver should be run with correspondingly looser tolerances.

use std::fmt::{Debug, Display, LowerExp};
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::ToPrimitive;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real floating-point scalar usable by the synthesis pipeline.
pub trait Real:
    RealField
    + Copy
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        nalgebra::convert(x)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    fn is_finite_value(self) -> bool {
        self.to_f64_lossy().is_finite()
    }
}

impl Real for f32 {}
impl Real for f64 {}
