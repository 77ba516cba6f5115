//! Scalar abstraction shared by the charge and conversion models.
//!
//! Every transfer function in the analog chain is a ratio of capacitances, so
//! the same code runs over exact rationals (the reference path) and over
//! floats (the Monte-Carlo fast path).

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// Numeric type the analog chain can be evaluated in.
pub trait Scalar: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// True when arithmetic is exact (no rounding).
    const EXACT: bool;

    /// `num / den` in this representation. `den` must be non-zero.
    fn from_ratio(num: i64, den: i64) -> Self;

    fn from_int(n: i64) -> Self {
        Self::from_ratio(n, 1)
    }

    /// Floor to an integer. Float types snap values within rounding distance
    /// of an integer onto it first, so that quantities which are exact
    /// rationals floor identically on both paths.
    fn floor_i64(&self) -> i64;

    fn to_f64(&self) -> f64;
}

fn snapped_floor(x: f64, rel_eps: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= rel_eps * x.abs().max(1.0) {
        r as i64
    } else {
        x.floor() as i64
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }

    fn floor_i64(&self) -> i64 {
        snapped_floor(*self, 1e-9)
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    const EXACT: bool = false;

    fn from_ratio(num: i64, den: i64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn floor_i64(&self) -> i64 {
        snapped_floor(*self as f64, 1e-4)
    }

    fn to_f64(&self) -> f64 {
        *self as f64
    }
}

impl Scalar for Ratio<i64> {
    const EXACT: bool = true;

    fn from_ratio(num: i64, den: i64) -> Self {
        Ratio::new(num, den)
    }

    fn floor_i64(&self) -> i64 {
        self.floor().to_integer()
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for Ratio<i128> {
    const EXACT: bool = true;

    fn from_ratio(num: i64, den: i64) -> Self {
        Ratio::new(num as i128, den as i128)
    }

    fn floor_i64(&self) -> i64 {
        self.floor().to_integer() as i64
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}
