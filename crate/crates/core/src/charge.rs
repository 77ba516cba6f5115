//! Charge-conservation model of one CIM MVM group.
//!
//! All capacitors are equal unit caps, so every node voltage is a ratio of
//! capacitor counts. Voltages are kept as fractions of the supply
//! ([`VoltageRatio`]) and the whole chain is generic over [`Scalar`].
//!
//! Polarity is positive-logic: a retained cap holds its DAC voltage and the
//! output grows with the MAC value. The silicon's inverted encoding (MAC line
//! precharged to VDD) is behaviorally equivalent.
//!
//! Phases, in order: C-DAC (`dac_convert`), multiply (`multiply_phase`),
//! MAC-line charge sharing (`accumulate_macline`) and the inter-slice
//! shift-and-add (`shift_add`). `mvm_analog` evaluates the whole chain.

use crate::config::MacroConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const PPM: i64 = 1_000_000;

/// Node voltage as a fraction of the supply, in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct VoltageRatio<T>(T);

impl<T: Scalar> VoltageRatio<T> {
    pub fn new(value: T) -> Result<Self> {
        if value < T::zero() || value > T::one() {
            return Err(Error::invalid(
                "voltage",
                format!("{:?} is outside [0, 1] of the supply", value),
            ));
        }
        Ok(VoltageRatio(value))
    }

    pub fn from_ratio(num: i64, den: i64) -> Result<Self> {
        Self::new(T::from_ratio(num, den))
    }

    pub fn zero() -> Self {
        VoltageRatio(T::zero())
    }

    pub fn value(&self) -> T {
        self.0
    }

    pub fn volts(&self, cfg: &MacroConfig) -> f64 {
        self.0.to_f64() * cfg.supply_voltage
    }
}

/// Cap voltages of every cluster on one MAC line.
#[derive(Clone, Debug, PartialEq)]
pub struct CapBank<T> {
    pub voltages: Vec<VoltageRatio<T>>,
}

impl<T: Scalar> CapBank<T> {
    pub fn uniform(len: usize, v: VoltageRatio<T>) -> Self {
        CapBank {
            voltages: vec![v; len],
        }
    }

    pub fn len(&self) -> usize {
        self.voltages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voltages.is_empty()
    }
}

/// Post-multiply cap banks of every slice, MSB slice first.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupState<T> {
    pub slice_banks: Vec<CapBank<T>>,
}

fn check_digit(x: u32, bits: u32) -> Result<()> {
    if (x as u64) >> bits != 0 {
        return Err(Error::out_of_range(
            "input digit",
            x as i64,
            format!("0..{}", 1u64 << bits),
        ));
    }
    Ok(())
}

/// Driven unit caps for digit `x` (MSB group first); the column shares the
/// charge over all `column_clusters` caps, undriven ones included.
fn dac_driven_caps(x: u32, cfg: &MacroConfig) -> i64 {
    let bits = cfg.dac_group_sizes.len();
    cfg.dac_group_sizes
        .iter()
        .enumerate()
        .filter(|(b, _)| (x >> (bits - 1 - b)) & 1 == 1)
        .map(|(_, &size)| size as i64)
        .sum()
}

/// Two-phase in-situ C-DAC: groups selected by the bits of `x` charge to VDD,
/// then the whole column shares charge.
pub fn dac_convert<T: Scalar>(x: u32, cfg: &MacroConfig) -> Result<VoltageRatio<T>> {
    check_digit(x, cfg.dac_bits())?;
    VoltageRatio::from_ratio(dac_driven_caps(x, cfg), cfg.column_clusters as i64)
}

/// Each cap keeps its sampled voltage where the stored bit is 1 and fully
/// discharges where it is 0.
pub fn multiply_phase<T: Scalar>(sampled: &CapBank<T>, weight_bits: &[u8]) -> Result<CapBank<T>> {
    if weight_bits.len() != sampled.len() {
        return Err(Error::length("weight bits", sampled.len(), weight_bits.len()));
    }
    let voltages = sampled
        .voltages
        .iter()
        .zip(weight_bits)
        .map(|(&v, &bit)| match bit {
            0 => Ok(VoltageRatio::zero()),
            1 => Ok(v),
            other => Err(Error::out_of_range("weight bit", other as i64, "0..=1")),
        })
        .collect::<Result<_>>()?;
    Ok(CapBank { voltages })
}

fn parasitic_ratio<T: Scalar>(ppm: u32) -> T {
    T::from_ratio(ppm as i64, PPM)
}

/// Charge sharing over the MAC line with an extra parasitic capacitance of
/// `parasitic_ppm` (relative to the line's total unit capacitance) that
/// starts discharged.
pub fn accumulate_macline_with_parasitic<T: Scalar>(bank: &CapBank<T>, parasitic_ppm: u32) -> Result<VoltageRatio<T>> {
    if bank.is_empty() {
        return Err(Error::invalid("cap bank", "cannot accumulate an empty MAC line"));
    }
    let charge = bank.voltages.iter().fold(T::zero(), |acc, v| acc + v.value());
    let n = T::from_int(bank.len() as i64);
    let caps = n * (T::one() + parasitic_ratio::<T>(parasitic_ppm));
    VoltageRatio::new(charge / caps)
}

/// Charge sharing across equal caps: the mean cap voltage.
pub fn accumulate_macline<T: Scalar>(bank: &CapBank<T>) -> Result<VoltageRatio<T>> {
    accumulate_macline_with_parasitic(bank, 0)
}

/// Weighted charge sharing between slices: slice `s` contributes its segment
/// of `sa_segment_sizes[s]` caps (plus its line parasitic, if configured).
pub fn shift_add<T: Scalar>(slice_voltages: &[VoltageRatio<T>], cfg: &MacroConfig) -> Result<VoltageRatio<T>> {
    if slice_voltages.len() != cfg.slices_per_group {
        return Err(Error::length("slice voltages", cfg.slices_per_group, slice_voltages.len()));
    }
    let rows = T::from_int(cfg.rows_per_slice as i64);
    let mut charge = T::zero();
    let mut caps = T::zero();
    for (s, v) in slice_voltages.iter().enumerate() {
        let c = T::from_int(cfg.sa_segment_sizes[s] as i64) + rows * parasitic_ratio::<T>(cfg.parasitic_ppm(s));
        charge = charge + c * v.value();
        caps = caps + c;
    }
    VoltageRatio::new(charge / caps)
}

fn check_mvm_args(inputs: &[u32], weights: &[u32], cfg: &MacroConfig) -> Result<()> {
    if inputs.len() != cfg.rows_per_slice {
        return Err(Error::length("input vector", cfg.rows_per_slice, inputs.len()));
    }
    if weights.len() != cfg.rows_per_slice {
        return Err(Error::length("weight vector", cfg.rows_per_slice, weights.len()));
    }
    let wbits = cfg.slices_per_group as u32;
    for &x in inputs {
        check_digit(x, cfg.dac_bits())?;
    }
    for &w in weights {
        if wbits < 32 && (w >> wbits) != 0 {
            return Err(Error::out_of_range("weight", w as i64, format!("0..{}", 1u64 << wbits)));
        }
    }
    Ok(())
}

/// Run the phase-by-phase chain; returns the post-multiply state and the
/// shift-and-add output. `weights[i]` holds row `i`'s weight, one bit per
/// slice with the MSB in slice 0.
pub fn simulate_group<T: Scalar>(
    inputs: &[u32],
    weights: &[u32],
    cfg: &MacroConfig,
) -> Result<(GroupState<T>, VoltageRatio<T>)> {
    check_mvm_args(inputs, weights, cfg)?;
    let sampled = CapBank {
        voltages: inputs.iter().map(|&x| dac_convert(x, cfg)).collect::<Result<_>>()?,
    };
    let slices = cfg.slices_per_group;
    let mut slice_banks = Vec::with_capacity(slices);
    let mut slice_voltages = Vec::with_capacity(slices);
    for s in 0..slices {
        let bits: Vec<u8> = weights.iter().map(|w| ((w >> (slices - 1 - s)) & 1) as u8).collect();
        let bank = multiply_phase(&sampled, &bits)?;
        slice_voltages.push(accumulate_macline_with_parasitic(&bank, cfg.parasitic_ppm(s))?);
        slice_banks.push(bank);
    }
    let out = shift_add(&slice_voltages, cfg)?;
    Ok((GroupState { slice_banks }, out))
}

/// End-to-end analog MVM of one group: PCH, DAC1/DAC2, Mul, Acc, S.A.
///
/// With binary DAC groups and binary segments this equals
/// `Σ W_i X_i / (2^b_A · N · (2^b_W − 1))` exactly.
pub fn mvm_analog<T: Scalar>(inputs: &[u32], weights: &[u32], cfg: &MacroConfig) -> Result<VoltageRatio<T>> {
    check_mvm_args(inputs, weights, cfg)?;
    Ok(ChargeKernel::new(cfg)?.evaluate(inputs, weights))
}

/// Precomputed form of the group chain for repeated evaluation.
///
/// Charges are tracked as integer multiples of `C_u·VDD / column_clusters`,
/// which is how the chain conserves charge; the only divisions are the final
/// charge-sharing ratios.
#[derive(Clone, Debug)]
pub struct ChargeKernel<T> {
    rows: usize,
    slices: usize,
    /// Driven caps per input digit.
    dac_caps: Vec<i64>,
    column: i64,
    segments: Vec<i64>,
    parasitic_ppm: Vec<u32>,
    ideal_den: i64,
    full_scale: VoltageRatio<T>,
}

impl<T: Scalar> ChargeKernel<T> {
    pub fn new(cfg: &MacroConfig) -> Result<Self> {
        cfg.validate()?;
        let levels = 1u32 << cfg.dac_bits();
        let dac_caps: Vec<i64> = (0..levels).map(|x| dac_driven_caps(x, cfg)).collect();
        let segments: Vec<i64> = cfg.sa_segment_sizes.iter().map(|&s| s as i64).collect();
        let column = cfg.column_clusters as i64;
        let seg_total: i64 = segments.iter().sum();
        let mut kernel = ChargeKernel {
            rows: cfg.rows_per_slice,
            slices: cfg.slices_per_group,
            dac_caps,
            column,
            parasitic_ppm: (0..cfg.slices_per_group).map(|s| cfg.parasitic_ppm(s)).collect(),
            ideal_den: column * cfg.rows_per_slice as i64 * seg_total,
            segments,
            full_scale: VoltageRatio::zero(),
        };
        let xmax = vec![levels - 1; kernel.rows];
        let wmax = vec![((1u64 << kernel.slices) - 1) as u32; kernel.rows];
        kernel.full_scale = kernel.evaluate(&xmax, &wmax);
        Ok(kernel)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Output at maximum input and weight on every row.
    pub fn full_scale(&self) -> VoltageRatio<T> {
        self.full_scale
    }

    /// Same contract as [`mvm_analog`] without argument checks; digits and
    /// weights must be in range. Rows beyond the slice height are ignored.
    pub fn evaluate(&self, inputs: &[u32], weights: &[u32]) -> VoltageRatio<T> {
        self.combine(&self.slice_charges(inputs, weights)[..self.slices])
    }

    /// Charge retained on each slice's MAC line after the multiply phase.
    pub(crate) fn slice_charges(&self, inputs: &[u32], weights: &[u32]) -> [i64; 16] {
        let mut acc = [0i64; 16];
        debug_assert!(self.slices <= acc.len());
        for (&x, &w) in inputs.iter().zip(weights).take(self.rows) {
            let q = self.dac_caps[x as usize];
            for (s, a) in acc.iter_mut().enumerate().take(self.slices) {
                *a += q * ((w >> (self.slices - 1 - s)) & 1) as i64;
            }
        }
        acc
    }

    /// Single-slice charge for bit `weight_shift` of the weights and either
    /// bit `q` of the inputs or the whole input digit (BS / WBS bit-plane
    /// extraction without allocating).
    pub(crate) fn plane_charge(&self, inputs: &[u32], input_shift: Option<u32>, weights: &[u32], weight_shift: u32) -> i64 {
        debug_assert_eq!(self.slices, 1);
        let mut acc = 0i64;
        for (&x, &w) in inputs.iter().zip(weights).take(self.rows) {
            if (w >> weight_shift) & 1 == 1 {
                let digit = match input_shift {
                    Some(q) => (x >> q) & 1,
                    None => x,
                };
                acc += self.dac_caps[digit as usize];
            }
        }
        acc
    }

    /// Segment-weighted charge `Σ_s seg_s·q_s`. Without parasitics the output
    /// voltage is this over a constant, so ratios of outputs are ratios of it.
    pub(crate) fn linear_charge(&self, acc: &[i64]) -> Option<i64> {
        if self.parasitic_ppm.iter().any(|&p| p != 0) {
            return None;
        }
        Some(acc.iter().zip(&self.segments).map(|(a, s)| a * s).sum())
    }

    pub(crate) fn full_scale_charge(&self) -> Option<i64> {
        let max_digit = self.dac_caps.len() as u32 - 1;
        let acc = [self.dac_caps[max_digit as usize] * self.rows as i64; 16];
        self.linear_charge(&acc[..self.slices])
    }

    pub(crate) fn combine(&self, acc: &[i64]) -> VoltageRatio<T> {
        let rows = self.rows as i64;
        if let Some(charge) = self.linear_charge(acc) {
            return VoltageRatio(T::from_ratio(charge, self.ideal_den));
        }
        let mut charge = T::zero();
        let mut caps = T::zero();
        for s in 0..self.slices {
            let ppm = self.parasitic_ppm[s] as i64;
            // Slice voltage after the MAC-line share, including its parasitic.
            let v = T::from_ratio(acc[s] * PPM, self.column * rows * (PPM + ppm));
            let c = T::from_ratio(self.segments[s] * PPM + rows * ppm, PPM);
            charge = charge + c * v;
            caps = caps + c;
        }
        VoltageRatio(charge / caps)
    }
}
