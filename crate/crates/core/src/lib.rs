//! Charge-exact behavioral model of a bit-parallel analog compute-in-memory
//! SRAM macro, with an SQNR/energy analysis harness and a small quantized
//! inference mapper.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below pick the
//! common instantiations.

pub mod adc;
pub mod analysis;
pub mod charge;
pub mod config;
pub mod energy;
pub mod error;
pub mod nn;
pub mod scalar;
pub mod scheme;

use num_rational::Ratio;

pub use adc::{AdcCode, NonIdealityProfile};
pub use charge::{mvm_analog, ChargeKernel, VoltageRatio};
pub use config::{load_config, MacroConfig, Scheme, SchemeSpec, WeightBank};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use scheme::{MvmEngine, MvmResult};

/// Exact reference arithmetic.
pub type Exact = Ratio<i128>;
/// Exact arithmetic with narrower integers, for exhaustive enumerations.
pub type Exact64 = Ratio<i64>;

pub type ExactVoltage = VoltageRatio<Exact>;
pub type FastVoltage = VoltageRatio<f64>;
