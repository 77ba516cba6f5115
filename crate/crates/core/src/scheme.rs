//! Multi-bit MVM under the bit-parallel, weight-bit-serial and bit-serial
//! schemes, with signed-weight offset mapping and tiling over `K > N`.
//!
//! Each analog conversion is read against the core's full-scale output: the
//! voltage becomes an estimate `S` of the partial sum in `[0, M]`, with
//! `M = N·(2^b_A − 1)·(2^b_W − 1)`, and the ADC sees `g·S/Δ + 1/2` where
//! `Δ = max(1, M/(L − 1))`. Codes are weighted by `2^p·2^q` per bit plane and
//! summed as integers; one code step is worth `Δ/g`.

use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use crate::adc::{quantize_lsb, NonIdealityProfile};
use crate::charge::ChargeKernel;
use crate::config::{max_ideal_output_rows, MacroConfig, Scheme, SchemeSpec};
use crate::energy::{levels_to_bits, mvm_energy, EnergyParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::Exact;

/// Outcome of one (possibly tiled) MVM.
#[derive(Clone, Debug, PartialEq)]
pub struct MvmResult {
    /// `Σ 2^(p+q)·code` over all conversions.
    pub code_sum: i128,
    /// Value of one code step, `Δ/g`.
    pub step: Exact,
    /// Exact `Σ W_i X_i`.
    pub exact: i64,
    pub conversions: usize,
    pub saturations: usize,
    pub energy_units: f64,
}

impl MvmResult {
    /// Reconstructed dot product.
    pub fn value(&self) -> Exact {
        if self.step.is_integer() {
            Exact::from_integer(self.step.to_integer() * self.code_sum)
        } else {
            self.step * Exact::from_integer(self.code_sum)
        }
    }

    pub fn value_f64(&self) -> f64 {
        ToPrimitive::to_f64(&self.value()).unwrap_or(f64::NAN)
    }

    /// Reconstructed dot product rounded to an integer (half away from zero).
    pub fn output(&self) -> i64 {
        self.value().round().to_integer() as i64
    }

    /// `value − exact`.
    pub fn error(&self) -> f64 {
        self.value_f64() - self.exact as f64
    }

    pub fn is_exact(&self) -> bool {
        (self.value() - Exact::from_integer(self.exact as i128)).is_zero()
    }
}

/// A scheme bound to a macro geometry and ADC profile, with the analog core
/// precomputed. `T` is the arithmetic of the charge and conversion path.
#[derive(Clone, Debug)]
pub struct MvmEngine<T> {
    spec: SchemeSpec,
    analog: MacroConfig,
    kernel: ChargeKernel<T>,
    profile: NonIdealityProfile,
    energy_per_row: f64,
    max_output: u64,
    /// `min(M, L − 1)·g / v_fs`: output voltage to ADC input in LSB.
    lsb_scale: T,
    half: T,
    /// `(a, b)` with ADC input `(2·charge·a + b) / 2b` when the readout is
    /// linear in the integer charge.
    linear: Option<(i64, i64)>,
    step: Exact,
}

impl<T: Scalar> MvmEngine<T> {
    /// `rows` is the number of rows per analog conversion (N); the rest of
    /// the geometry comes from `cfg`.
    pub fn new(spec: SchemeSpec, rows: usize, cfg: &MacroConfig, profile: &NonIdealityProfile) -> Result<Self> {
        spec.validate()?;
        profile.validate()?;
        if rows == 0 {
            return Err(Error::invalid("rows", "must be at least 1"));
        }
        if spec.model_input_bits > 31 || spec.model_weight_bits > 31 {
            return Err(Error::invalid("scheme", "model bit widths above 31 are not supported"));
        }
        let analog = cfg.analog_core(rows, spec.analog_input_bits, spec.analog_weight_bits)?;
        let kernel = ChargeKernel::new(&analog)?;
        let max_output = max_ideal_output_rows(rows, &spec);
        let levels = profile.resolution_levels();
        let top = levels - 1;
        let step_lsb = if top >= max_output {
            Exact::one()
        } else {
            Exact::new(max_output as i128, top as i128)
        };
        let g = profile.gain();
        let gain = Exact::new(*g.numer() as i128, *g.denom() as i128);
        let full_scale = kernel.full_scale().value();
        if full_scale == T::zero() {
            return Err(Error::invalid("analog core", "zero full-scale output"));
        }
        let span = top.min(max_output) as i64;
        let lsb_scale = T::from_ratio(span * g.numer(), *g.denom()) / full_scale;
        let linear = kernel.full_scale_charge().and_then(|full| {
            let a = span as i128 * *g.numer() as i128;
            let b = full as i128 * *g.denom() as i128;
            let biggest = 2 * full as i128 * a + b;
            (biggest <= i64::MAX as i128 && 2 * b <= i64::MAX as i128).then_some((a as i64, b as i64))
        });
        Ok(MvmEngine {
            spec,
            analog,
            kernel,
            profile: profile.clone(),
            energy_per_row: Self::row_energy(&spec, rows, profile, &EnergyParams::default()),
            max_output,
            lsb_scale,
            half: T::from_ratio(1, 2),
            linear,
            step: step_lsb / gain,
        })
    }

    pub fn with_energy_params(mut self, params: EnergyParams) -> Self {
        self.energy_per_row = Self::row_energy(&self.spec, self.rows(), &self.profile, &params);
        self
    }

    /// Energy per dot-product element (the energy model is linear in K).
    fn row_energy(spec: &SchemeSpec, rows: usize, profile: &NonIdealityProfile, params: &EnergyParams) -> f64 {
        let bits = levels_to_bits(profile.resolution_levels());
        mvm_energy(rows, rows, spec, bits, params) / rows as f64
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    pub fn rows(&self) -> usize {
        self.analog.rows_per_slice
    }

    pub fn analog_config(&self) -> &MacroConfig {
        &self.analog
    }

    pub fn profile(&self) -> &NonIdealityProfile {
        &self.profile
    }

    /// Largest exact partial sum of one conversion.
    pub fn max_output(&self) -> u64 {
        self.max_output
    }

    fn check(&self, x: &[u32], w: &[u32]) -> Result<()> {
        if x.is_empty() {
            return Err(Error::invalid("input vector", "K must be at least 1"));
        }
        if x.len() != w.len() {
            return Err(Error::length("weight vector", x.len(), w.len()));
        }
        let (ba, bw) = (self.spec.model_input_bits, self.spec.model_weight_bits);
        if let Some(&bad) = x.iter().find(|&&v| v >> ba != 0) {
            return Err(Error::out_of_range("input", bad as i64, format!("0..{}", 1u64 << ba)));
        }
        if let Some(&bad) = w.iter().find(|&&v| v >> bw != 0) {
            return Err(Error::out_of_range("weight", bad as i64, format!("0..{}", 1u64 << bw)));
        }
        Ok(())
    }

    fn convert<R: Rng + ?Sized>(&self, acc: &[i64], rng: &mut R, saturations: &mut usize) -> i128 {
        let x = match (self.linear, self.kernel.linear_charge(acc)) {
            (Some((a, b)), Some(charge)) => T::from_ratio(2 * charge * a + b, 2 * b),
            _ => self.kernel.combine(acc).value() * self.lsb_scale + self.half,
        };
        let c = quantize_lsb(x, &self.profile, rng);
        *saturations += c.saturated as usize;
        c.code as i128
    }

    /// Conversions for one tile of at most N rows (shorter tiles behave as
    /// zero-padded).
    fn run_tile<R: Rng + ?Sized>(&self, x: &[u32], w: &[u32], rng: &mut R, saturations: &mut usize) -> i128 {
        let k = &self.kernel;
        match self.spec.scheme {
            Scheme::Bp => {
                let acc = k.slice_charges(x, w);
                self.convert(&acc[..self.analog.slices_per_group], rng, saturations)
            }
            Scheme::Wbs => (0..self.spec.model_weight_bits)
                .map(|p| self.convert(&[k.plane_charge(x, None, w, p)], rng, saturations) << p)
                .sum(),
            Scheme::Bs => {
                let mut sum = 0;
                for p in 0..self.spec.model_weight_bits {
                    for q in 0..self.spec.model_input_bits {
                        sum += self.convert(&[k.plane_charge(x, Some(q), w, p)], rng, saturations) << (p + q);
                    }
                }
                sum
            }
        }
    }

    /// Any `K ≥ 1`: `ceil(K/N)` tiles, the last one zero-padded, with the
    /// quantized partial sums added digitally in tile order.
    pub fn tile_mvm<R: Rng + ?Sized>(&self, x: &[u32], w: &[u32], rng: &mut R) -> Result<MvmResult> {
        self.check(x, w)?;
        let n = self.rows();
        let mut saturations = 0;
        let mut code_sum = 0i128;
        for (xc, wc) in x.chunks(n).zip(w.chunks(n)) {
            code_sum += self.run_tile(xc, wc, rng, &mut saturations);
        }
        let tiles = x.len().div_ceil(n);
        Ok(MvmResult {
            code_sum,
            step: self.step,
            exact: x.iter().zip(w).map(|(&a, &b)| a as i64 * b as i64).sum(),
            conversions: tiles * self.spec.conversions_per_tile(),
            saturations,
            energy_units: self.energy_per_row * x.len() as f64,
        })
    }

    /// One tile of exactly N rows.
    pub fn execute_mvm<R: Rng + ?Sized>(&self, x: &[u32], w: &[u32], rng: &mut R) -> Result<MvmResult> {
        if x.len() != self.rows() {
            return Err(Error::length("input vector", self.rows(), x.len()));
        }
        self.tile_mvm(x, w, rng)
    }

    /// Signed weights through the offset mapping: `Q(Σ W̃_i X_i) − 2^(B_W−1)·Σ X_i`
    /// with `W̃ = W + 2^(B_W−1)`. `input_sum` is the digital `Σ X_i`, shared
    /// across every output row that sees the same input vector.
    pub fn signed_mvm_with_sum<R: Rng + ?Sized>(
        &self,
        x: &[u32],
        w_signed: &[i32],
        input_sum: i64,
        rng: &mut R,
    ) -> Result<i64> {
        Ok(self.signed_mvm_detailed(x, w_signed, input_sum, rng)?.0)
    }

    /// As [`Self::signed_mvm_with_sum`], also returning the unsigned MVM.
    pub fn signed_mvm_detailed<R: Rng + ?Sized>(
        &self,
        x: &[u32],
        w_signed: &[i32],
        input_sum: i64,
        rng: &mut R,
    ) -> Result<(i64, MvmResult)> {
        let offset = 1i32 << (self.spec.model_weight_bits - 1);
        let shift = |v: i32| {
            if v < -offset || v >= offset {
                Err(Error::out_of_range("signed weight", v as i64, format!("{}..{}", -offset, offset)))
            } else {
                Ok((v + offset) as u32)
            }
        };
        let mut small = [0u32; 16];
        let mapped: Vec<u32>;
        let unsigned = if w_signed.len() <= small.len() {
            for (m, &v) in small.iter_mut().zip(w_signed) {
                *m = shift(v)?;
            }
            &small[..w_signed.len()]
        } else {
            mapped = w_signed.iter().map(|&v| shift(v)).collect::<Result<_>>()?;
            &mapped[..]
        };
        let r = self.tile_mvm(x, unsigned, rng)?;
        Ok((r.output() - offset as i64 * input_sum, r))
    }

    pub fn signed_mvm<R: Rng + ?Sized>(&self, x: &[u32], w_signed: &[i32], rng: &mut R) -> Result<i64> {
        let sum = x.iter().map(|&v| v as i64).sum();
        self.signed_mvm_with_sum(x, w_signed, sum, rng)
    }
}

/// Profile that resolves every partial sum of `spec` on `rows` rows.
pub fn full_precision_profile(rows: usize, spec: &SchemeSpec) -> NonIdealityProfile {
    let levels = (max_ideal_output_rows(rows, spec) + 1).max(2);
    NonIdealityProfile::ideal(levels).expect("level count is valid")
}

/// Single-tile MVM on the exact arithmetic path.
pub fn execute_mvm<R: Rng + ?Sized>(
    spec: SchemeSpec,
    x: &[u32],
    w: &[u32],
    cfg: &MacroConfig,
    profile: &NonIdealityProfile,
    rng: &mut R,
) -> Result<MvmResult> {
    MvmEngine::<Exact>::new(spec, cfg.rows_per_slice, cfg, profile)?.execute_mvm(x, w, rng)
}

/// Tiled MVM on the exact arithmetic path; `cfg.rows_per_slice` rows per tile.
pub fn tile_mvm<R: Rng + ?Sized>(
    spec: SchemeSpec,
    x: &[u32],
    w: &[u32],
    cfg: &MacroConfig,
    profile: &NonIdealityProfile,
    rng: &mut R,
) -> Result<MvmResult> {
    MvmEngine::<Exact>::new(spec, cfg.rows_per_slice, cfg, profile)?.tile_mvm(x, w, rng)
}

pub fn signed_mvm<R: Rng + ?Sized>(
    spec: SchemeSpec,
    x: &[u32],
    w_signed: &[i32],
    cfg: &MacroConfig,
    profile: &NonIdealityProfile,
    rng: &mut R,
) -> Result<i64> {
    MvmEngine::<Exact>::new(spec, cfg.rows_per_slice, cfg, profile)?.signed_mvm(x, w_signed, rng)
}
